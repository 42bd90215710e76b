"""Child-process entry point: ``python -m nwdaf_loop.harness.launch <role> --config X --events Y``."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from ..net import EventLog


def main(argv=None) -> int:
    p = argparse.ArgumentParser()
    p.add_argument("role", choices=["upf", "mlprov", "nwdaf", "smf"])
    p.add_argument("--config", required=True)
    p.add_argument("--events")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    events = EventLog(args.events, source=args.role) if args.events else None
    if args.role == "upf":
        from ..upf.service import from_config
    elif args.role == "mlprov":
        from ..mlprov.service import from_config
    elif args.role == "nwdaf":
        from ..nwdaf.service import from_config
    else:
        from ..smf.service import from_config
    svc = from_config(args.config, events=events)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    svc.start()
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    svc.stop()
    if events is not None:
        events.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
