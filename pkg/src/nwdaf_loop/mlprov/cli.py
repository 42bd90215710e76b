"""``mlprov`` command: train a forest from a feature CSV, serve the registry, register a model."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from ..engine.graph import FEATURE_SCHEMA
from ..net import post
from .dataset import read_feature_csv
from .forest import train_forest


def _train(args: argparse.Namespace) -> int:
    X, y = read_feature_csv(args.data)
    model = train_forest(X, y, num_trees=args.trees, max_depth=args.max_depth, seed=args.seed,
                         feature_schema=FEATURE_SCHEMA, name=args.name)
    Path(args.out).write_text(model.dumps(), encoding="utf-8")
    print(f"trained {args.name}: {len(model.trees)} trees on {len(y)} rows, "
          f"train accuracy {model.descriptor.metrics.get('trainAccuracy')} -> {args.out}")
    return 0


def _serve(args: argparse.Namespace) -> int:
    from .service import from_config

    svc = from_config(args.config).start()
    print(f"mlprov listening on {svc.base_uri}", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    svc.stop()
    return 0


def _register(args: argparse.Namespace) -> int:
    status, body = post(args.uri.rstrip("/") + "/admin/models", Path(args.model).read_bytes(), timeout=5.0)
    print(body.decode())
    return 0 if status == 201 else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    p = argparse.ArgumentParser(prog="mlprov")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    t = sub.add_parser("train", help="train a random forest from a feature CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--trees", type=int, default=100)
    t.add_argument("--max-depth", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--name", default="bot-rf")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_train)
    s = sub.add_parser("serve", help="run the provisioning HTTP service")
    s.add_argument("--config", required=True)
    s.set_defaults(fn=_serve)
    r = sub.add_parser("register", help="upload a trained model to a running service")
    r.add_argument("--uri", required=True)
    r.add_argument("--model", required=True)
    r.set_defaults(fn=_register)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
