"""CLI entry: serve the adapter, optionally registering with a gateway."""

import argparse

from .app import serve_adapter
from .bindings import DEFAULT_BINDINGS


def main():
    parser = argparse.ArgumentParser(description="Serve HF models + CAM explainers.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8010)
    parser.add_argument("--gateway-url", default=None,
                        help="Gateway base URL to register bindings with.")
    args = parser.parse_args()
    serve_adapter(DEFAULT_BINDINGS, host=args.host, port=args.port,
                  gateway_url=args.gateway_url)


if __name__ == "__main__":
    main()
