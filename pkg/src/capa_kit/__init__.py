"""Continuous-aperture array (CAPA) beamforming, capacity and DMT toolkit.

Every continuous integral over an aperture is evaluated by Gauss-Legendre
quadrature; multiuser problems reduce to Gram-matrix algebra, point-to-point
links to the singular system of the radiation operator, and fading links to
wavenumber-domain random matrices.
"""

__version__ = "0.1.0"
