"""Run the sidecar: ``python -m clip_sidecar --host 0.0.0.0 --port 8000``."""

import argparse

import uvicorn

from .app import create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="clip-sidecar",
                                     description="embedding service over HTTP")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--model", default="hashed-512",
                        help="'hashed-<dim>' (deterministic, offline) or a "
                             "sentence-transformers model id")
    args = parser.parse_args(argv)
    uvicorn.run(create_app(args.model, eager=False), host=args.host, port=args.port,
                log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
