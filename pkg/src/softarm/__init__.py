"""Synthetic hysteretic soft arm with learned forward and inverse kinematics.

Submodules: ``plant`` (simulator), ``datagen`` (excitation data, windows,
normalization), ``nncore`` (numpy LSTM/dense layers, Adam, gradient checks),
``models`` (networks, loss variants, training), ``control`` (trajectory
tracking), ``artifacts`` (file formats) and ``cli``.
"""

__version__ = "0.1.0"
