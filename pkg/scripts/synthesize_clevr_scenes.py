#!/usr/bin/env python3
"""Generate a CLEVR-schema scene file (synthetic stand-in for the real dataset).

Example:
    python scripts/synthesize_clevr_scenes.py --n 15000 --split val --seed 0 \
        --out scenes_val.json
"""

import argparse

from compose_probe.scenes import SourceSplit, synthesize_scenes, write_clevr_scenes


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=15000)
    parser.add_argument("--split", choices=["train", "val"], default="val")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    scenes = synthesize_scenes(args.n, SourceSplit(args.split), seed=args.seed)
    write_clevr_scenes(scenes, args.out)
    sizes = [len(s.objects) for s in scenes]
    print(f"wrote {len(scenes)} scenes to {args.out} "
          f"(objects per scene: min {min(sizes)}, max {max(sizes)})")


if __name__ == "__main__":
    main()
