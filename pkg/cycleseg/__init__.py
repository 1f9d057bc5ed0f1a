"""Group co-segmentation with cycle refinement, built on a small numpy autodiff engine."""
