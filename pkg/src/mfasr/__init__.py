"""Memory-frugal super-resolution toolkit.

Pure-numpy training and inference for a compact 4x upscaling generator,
plus the compression pipeline around it: adversarial training of a large
teacher, feature distillation into a student, a weight-shared supernet
over per-stage channel widths, and a latency-bounded evolutionary search
for the best narrow variant.
"""

__version__ = "0.1.0"
