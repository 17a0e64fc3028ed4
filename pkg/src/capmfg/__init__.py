"""Mean-field-game solvers for renewable generation-capacity markets.

Library layout:

- ``model``        market primitives: prices, demand, costs, optimal control
- ``nets``         minimal MLP with exact reverse-mode gradients + Adam
- ``noise``        counter-based Gaussian increments and Euler-Maruyama paths
- ``mfg``          deep FBSDE solver for the mean-capacity equilibrium
- ``stackelberg``  planner extension: value/decoupling networks and subsidy
- ``oracles``      closed-form, shooting and finite-difference ground truth
- ``cli``          command-line front end (solve, oracle, verify)
"""

__version__ = "0.1.0"
