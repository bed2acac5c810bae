"""Entry point: serve the plugin protocol over stdio."""

from __future__ import annotations

import argparse
import sys

from .fields import make_field
from .session import PluginSession, echo_callback, oracle_callback


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="denoise-plugin",
                                description="reference denoiser plugin (stdio)")
    p.add_argument("--callback", choices=["oracle", "echo"], default="oracle")
    p.add_argument("--target", default="ring-waves",
                   help="default oracle target field name")
    p.add_argument("--max-window", default="1024x1024", help="WxH capability")
    p.add_argument("--max-frames", type=int, default=256)
    args = p.parse_args(argv)

    w, h = (int(v) for v in args.max_window.lower().split("x"))
    if args.callback == "echo":
        callback = echo_callback
    else:
        callback = oracle_callback(make_field({"name": args.target}))
    session = PluginSession(callback=callback, max_window=(w, h),
                            max_frames=args.max_frames)
    return session.serve(sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
