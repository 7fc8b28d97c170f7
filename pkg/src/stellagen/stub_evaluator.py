"""Synthetic stand-in for an external equilibrium/Boozer evaluator.

Usage::

    python -m stellagen.stub_evaluator SURFACE.json OUT.json [--iota X] [--amplitude A]
                                       [--non-qs E]

Reads a surface JSON (``surface.save_surface`` format plus ``helicity``) and
writes the field JSON consumed by ``qsmetrics.run_external_evaluator``. The
field is ``1 + A cos(theta - N nfp phi) + E cos(theta + nfp phi)`` on the
surface's own angles; ``mean_iota`` is whatever ``--iota`` says (null by
default) because nothing here solves for the magnetic field.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .evaluation import synthetic_qs_field
from .qsmetrics import FieldOnSurface, write_field_json
from .surface import DegenerateSurfaceError, geometry, surface_from_dict


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stellagen-stub-evaluator")
    parser.add_argument("surface")
    parser.add_argument("out")
    parser.add_argument("--iota", type=float, default=None)
    parser.add_argument("--amplitude", type=float, default=0.1)
    parser.add_argument("--non-qs", type=float, default=0.0)
    args = parser.parse_args(argv)

    doc = json.loads(Path(args.surface).read_text())
    surface = surface_from_dict(doc)
    helicity = int(doc.get("helicity", 0))
    try:
        aspect = geometry(surface).aspect_ratio
    except DegenerateSurfaceError as exc:
        print(f"stub evaluator: {exc}", file=sys.stderr)
        return 3
    field = synthetic_qs_field(surface, helicity, args.amplitude)
    if args.non_qs:
        n_phi, n_theta = field.shape
        phi = 2 * np.pi * np.arange(n_phi)[:, None] / n_phi
        theta = 2 * np.pi * np.arange(n_theta)[None, :] / n_theta
        field = FieldOnSurface(field.nfp, helicity,
                               field.B + args.non_qs * np.cos(theta + surface.nfp * phi), field.weights)
    write_field_json(field, args.out, mean_iota=args.iota, aspect_ratio=aspect)
    return 0


if __name__ == "__main__":
    sys.exit(main())
