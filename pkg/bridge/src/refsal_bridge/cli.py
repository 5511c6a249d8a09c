"""Bridge server entry point.

Sessions: --echo FIXTURE_DIR replays recorded dumps; --model SPEC runs a
torch-backed session. Model specs: "toy[:SEED[:HxW]]" builds the bundled
random-weight model; "py:module:factory[:ARG]" imports a user factory
returning an object implementing the hook contract (see model module).
"""

from __future__ import annotations

import argparse
import importlib
import sys

from .echo import EchoSession
from .server import serve_stdio, serve_tcp


def build_session(args):
    if args.echo:
        return EchoSession(args.echo)
    spec = args.model
    if spec.startswith("toy"):
        from .model import TorchModelSession
        from .toy import build

        arg = spec[len("toy"):].lstrip(":")
        return TorchModelSession(build(arg), layer_index=args.layer)
    if spec.startswith("py:"):
        from .model import TorchModelSession

        rest = spec[len("py:"):]
        parts = rest.split(":", 2)
        if len(parts) < 2:
            raise SystemExit("model spec must be py:module:factory[:ARG]")
        module = importlib.import_module(parts[0])
        factory = getattr(module, parts[1])
        model = factory(parts[2]) if len(parts) > 2 else factory()
        return TorchModelSession(model, layer_index=args.layer)
    raise SystemExit(f"unknown model spec {spec!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="refsal-bridge", description=__doc__)
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--echo", help="replay recorded tensor dumps from this directory")
    source.add_argument("--model", help="torch model spec (toy[:SEED] or py:module:factory)")
    parser.add_argument("--layer", type=int, default=8,
                        help="1-based cross-attention layer to hook (default 8)")
    transport = parser.add_mutually_exclusive_group()
    transport.add_argument("--listen", default="127.0.0.1:0",
                           help="HOST:PORT to listen on (port 0 picks a free port)")
    transport.add_argument("--stdio", action="store_true",
                           help="serve one session over stdin/stdout")
    args = parser.parse_args(argv)

    session = build_session(args)
    if args.stdio:
        serve_stdio(session)
        return 0
    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        raise SystemExit(f"--listen expects HOST:PORT, got {args.listen!r}")
    try:
        serve_tcp(session, host, int(port))
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
