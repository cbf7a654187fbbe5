"""Linear-optical synthesis of single-mode non-Gaussian Fock superpositions.

Layered backcasting search plans a tree of small heralded circuits, solves
it from the target backwards, and verifies the assembled tree by forward
simulation on loop-hafnian Fock-amplitude kernels.
"""

__version__ = "0.1.0"
