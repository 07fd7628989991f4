"""Multi-name default pricing by scenario decomposition, with a contagion portfolio optimizer.

Modules:

* :mod:`scenarios` and :mod:`law`: default scenarios, conditional default densities and samplers
* :mod:`pricing`: conditional prices of kth-to-default and tranche payoffs
* :mod:`contagion`: asset and wealth dynamics with default-triggered jumps
* :mod:`optimizer`: backward-recursive CRRA utility maximization
* :mod:`oracle`: seeded Monte Carlo estimators used as an independent check
* :mod:`config`, :mod:`cli` and :mod:`validation`: configuration, command line and acceptance suite
"""

__version__ = "0.1.0"
