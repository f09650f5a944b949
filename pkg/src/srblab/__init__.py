"""
Banach SRB Lab

Induced volumes and determinants on finite-dimensional normed spaces, Lyapunov
exponents of smooth maps, local unstable manifolds, distortion products and the
conditional densities of SRB measures, each checked against known answers.
"""
