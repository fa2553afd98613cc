"""serve/dump entry points."""

from __future__ import annotations

import argparse
import sys

from .backends import ServiceConfig, load_backend


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encoder-service", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", choices=["toy", "hf-clip"], default="toy")
    common.add_argument("--model", default="openai/clip-vit-base-patch32")
    common.add_argument("--layer", choices=["last", "penultimate"], default="penultimate")
    common.add_argument("--device", default="cpu")
    common.add_argument("--max-batch", type=int, default=64)
    common.add_argument("--toy-dim", type=int, default=32)
    common.add_argument("--toy-seed", type=int, default=0)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8763)

    p = sub.add_parser("dump", parents=[common], help="encode a manifest into an EMB1 store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=32)
    return parser


def config_from_args(args) -> ServiceConfig:
    return ServiceConfig(
        backend=args.backend,
        model_name=args.model,
        layer=args.layer,
        device=args.device,
        max_batch=args.max_batch,
        toy_dim=args.toy_dim,
        toy_seed=args.toy_seed,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = load_backend(config_from_args(args))
    except Exception as exc:
        # refuse to start rather than serving a broken model
        print(f"failed to load model: {exc}", file=sys.stderr)
        return 1

    if args.command == "serve":
        import uvicorn

        from .app import create_app

        app = create_app(backend, max_batch=args.max_batch)
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return 0

    from .dump import dump_store

    count, skipped = dump_store(backend, args.manifest, args.out, batch=args.batch)
    print(f"wrote {count} records to {args.out}")
    for item in skipped:
        print(f"skipped {item}", file=sys.stderr)
    return 1 if skipped else 0


if __name__ == "__main__":
    sys.exit(main())
