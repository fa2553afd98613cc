#!/usr/bin/env python3
"""Directional check: crop/segment matching vs global similarity on real data.

Needs a running encoder service and a directory of rendered instance images
(named <instance_id>_pos.png / <instance_id>_neg.png as emitted by the
render manifest). Scores a subsample of instances with both scorers and
reports the group-score gap; with a real pretrained backbone the structured
scorer is expected to lead by a wide margin on color swaps.

Example:
    python scripts/directional_check.py --dataset color.jsonl \
        --encoder http://127.0.0.1:8763 --images renders/ --limit 100
"""

import argparse

from compose_probe.metrics import evaluate, load_instances
from compose_probe.scoring import GlobalLiveScorer, SgiLiveScorer
from compose_probe.sgi import SgiConfig
from compose_probe.crops import CropConfig, Placement
from compose_probe.remote import RemoteEncoder
from compose_probe.segments import Granularity


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--encoder", required=True, help="encoder service base URL")
    parser.add_argument("--images", required=True, help="rendered image directory")
    parser.add_argument("--limit", type=int, default=100)
    parser.add_argument("--placement", choices=["grid", "overlap"], default="overlap")
    parser.add_argument("--min-gap", type=float, default=20.0,
                        help="required group-score lead in points")
    args = parser.parse_args()

    instances = load_instances(args.dataset)[: args.limit]
    encoder = RemoteEncoder(args.encoder)
    print(f"encoder: {encoder.descriptor().model_name} "
          f"({encoder.descriptor().embedding_dim}d)")

    sgi_cfg = SgiConfig(
        crop_config=CropConfig(placement=Placement(args.placement)),
        granularity=Granularity.COARSE,
    )
    global_report = evaluate(instances, GlobalLiveScorer(encoder, args.images))
    sgi_report = evaluate(instances, SgiLiveScorer(encoder, args.images, sgi_cfg))

    g = global_report.average.group_pct
    s = sgi_report.average.group_pct
    print(f"global similarity group score:   {g:.1f}")
    print(f"structured matching group score: {s:.1f}")
    print(f"gap: {s - g:+.1f} points (required: {args.min_gap:+.1f})")
    raise SystemExit(0 if s - g >= args.min_gap else 1)


if __name__ == "__main__":
    main()
