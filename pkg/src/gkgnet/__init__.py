"""Group-KNN graph convolutional network for multi-label image recognition.

Self-contained desk-scale implementation: dense tensors with a tape-based
reverse-mode gradient engine, grouped K-nearest-neighbor graph construction,
group max-relative graph convolution, the four-stage patch/label dual-graph
model, multi-label losses, an evaluation metric suite, a synthetic shapes
dataset, and a CLI front end for training, evaluation, gradient checking,
ablation sweeps, and connection export.
"""

__version__ = "0.1.0"
