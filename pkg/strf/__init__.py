"""
Covariant spatio-temporal receptive fields.

Affine Gaussian derivative kernels over space, time-causal leaky integrator
channels over time, numerical covariance checks, synthetic event datasets and
a scale-channel network trained with surrogate gradients.
"""
