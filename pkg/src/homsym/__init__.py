"""homsym: symbols of averaged elliptic solution operators, two ways.

Computes the Fourier symbol of the translation-averaged solution operator of
-div(a grad u) = div f for periodic media by (i) shifted cell problems and
(ii) the higher-order corrector hierarchy, cross-validates the two routes,
verifies convergence rates of homogenized approximations, and probes the
analogous objects for iid random media on a discrete torus by Monte Carlo
with exact enumeration oracles.
"""

__version__ = "0.1.0"
