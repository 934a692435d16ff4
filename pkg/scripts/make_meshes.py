"""Regenerate the proxy meshes in ``data/`` from the default geometries."""
from __future__ import annotations

import argparse
from pathlib import Path

from dwr_adapt.geometry import ArteryGeometry, SiliconeGeometry
from dwr_adapt.mesh import save_mesh

DATA = Path(__file__).resolve().parents[1] / "data"


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=DATA)
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, geom in (("artery_proxy", ArteryGeometry()), ("silicone_proxy", SiliconeGeometry())):
        mesh = geom.build()
        save_mesh(mesh, args.out / f"{name}.mesh")
        print(f"{name}: {mesh.num_vertices} vertices, {mesh.num_cells} cells")


if __name__ == "__main__":
    main()
