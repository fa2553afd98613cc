#!/usr/bin/env python3
"""Overfit experiment: a 4-layer local model on 8 separable synthetic pairs.

Trains with the standard hyperparameters (lr 1e-4, betas 0.9/0.95, weight
decay 1e-7, cosine schedule with 10% warmup) and reports the first step at
which validation batch accuracy reaches 1.0.
"""

import argparse

from compose_probe.training import TrainConfig, make_separable_pairs, train, write_history_csv
from compose_probe.transformer import TransformerConfig, Variant


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=8)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--history", help="optional CSV output path")
    args = parser.parse_args()

    cfg = TransformerConfig(
        variant=Variant.LOCAL, layers=args.layers, model_dim=32, heads=4, ff_dim=64,
        max_patches=4, max_tokens=4,
        visual_dim=max(16, args.pairs), text_dim=max(16, args.pairs),
    )
    train_cfg = TrainConfig(batch_size=args.pairs, epochs=args.steps)
    data = make_separable_pairs(args.pairs, cfg, seed=args.seed)
    result = train(train_cfg, cfg, data, seed=args.seed)
    if args.history:
        write_history_csv(result.history, args.history)
    first = next((h["step"] for h in result.history if h["val_accuracy"] == 1.0), None)
    print(f"best validation accuracy: {result.best_val_accuracy:.3f}")
    print(f"first step at accuracy 1.0: {first}")


if __name__ == "__main__":
    main()
