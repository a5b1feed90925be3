"""
Sweeping tumour size and roundness
==================================

Grows tumours on one background over a grid of target areas and
sphericities, then prints what each cell reached.
"""

import sys
from pathlib import Path

import numpy as np

from radiosynth import make_phantom, remove_tumor
from radiosynth.grid import GridGeometry, ImageGrid, save_pgm
from radiosynth.synth import sweep, tumor_center

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)
budget = int(sys.argv[2]) if len(sys.argv) > 2 else 1500

image, labels = make_phantom(seed=3)
background = remove_tumor(image, labels, seed=1)
surfaces, spheres = [150.0, 300.0, 450.0], [0.75, 0.83, 0.91]

cells = sweep(background, tumor_center(labels), surfaces, spheres, seed=0, budget=budget)

print("target area, sphericity  ->  reached")
tiles = np.zeros((80 * len(spheres), 80 * len(surfaces)))
for c in cells:
    if not c.ok:
        print(f"  {c.pixel_surface:5.0f} {c.sphericity:.2f}  ->  failed: {c.error}")
        continue
    a = c.result.achieved
    print(f"  {c.pixel_surface:5.0f} {c.sphericity:.2f}  ->  "
          f"{a.get('ROI2', 'pixel_surface'):5.0f} {a.get('ROI2', 'sphericity'):.3f}")
    tiles[c.row * 80:(c.row + 1) * 80, c.col * 80:(c.col + 1) * 80] = c.result.image.intensities

montage = ImageGrid(GridGeometry(tiles.shape[1], tiles.shape[0]), tiles)
save_pgm(montage, out / "sweep.pgm", (float(tiles.min()), float(tiles.max())))
print(f"wrote {out}/sweep.pgm (rows: sphericity up, columns: area up)")
