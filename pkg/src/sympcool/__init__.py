"""sympcool: simulation and analysis toolkit for sympathetic cooling of trapped ions.

Subpackages cover N-body trap dynamics, analytic cooling models, motional
state detection signals, Monte Carlo ensembles and ablation-plume
velocimetry.
"""

__version__ = "0.1.0"
