"""Critical-mass chemotaxis on a truncated 2D grid.

Simulates the parabolic-elliptic Patlak-Keller-Segel flow at the critical
mass 8*pi by a regularized minimizing-movement (JKO) scheme, and validates
the functional inequalities and dissipation estimates that govern it:
Log-HLS, sharp Gagliardo-Nirenberg, Talagrand, thick tails, concentration
control, and the per-step entropy dissipation ledger.
"""

__version__ = "0.1.0"
