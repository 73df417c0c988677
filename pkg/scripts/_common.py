"""Shared argument handling for the experiment scripts."""

import argparse
import logging

from omad.config import PipelineConfig


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", help="JSON pipeline config (default: built-in defaults)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--uci", help="directory of UCI `.rd` files (default: synthetic corpus)")
    return p


def setup(args) -> PipelineConfig:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = PipelineConfig.load(args.config)
    return cfg.override("data.main_dir", args.uci) if args.uci else cfg
