#!/usr/bin/env python3
"""Stationary-density stability sweep over a noise ladder.

Writes the distance curve and the per-rung stationary densities to out/sweep;
tweak the ladder or bin count below for parameter studies.
"""

import pathlib
import sys

from lorenzlab.cli import main

OUT = pathlib.Path("out/sweep")

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "stability-sweep",
                "--out", str(OUT),
                "--bins", "512",
                "--set", "noise.eps_ladder=0.02,0.01,0.005,0.0025",
            ]
        )
    )
