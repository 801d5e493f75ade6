"""Unfolded proximal interior point method for image deblurring.

Modules
-------
linops        circulant operators and blur kernels
barrier_prox  proximity operators of logarithmic barriers and their derivatives
objective     smoothed-TV deblurring objective
solver        reference forward-backward interior point solver and VAR baseline
unfolded      the unfolded network (layers, gradients, model files)
training      greedy layer-wise training
stability     averagedness certificates on quadratic problems
imaging       image I/O, degradation, SSIM/PSNR, noise estimation
"""

__version__ = "0.1.0"
