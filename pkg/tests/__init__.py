"""
modules needs to be imported here to be detected in the __main__ file for auto import.
If a module is not imported here, it won't be tested by the tests package
"""
import tests.test_LoggerGenerator
import tests.test_DiscreteMeasure
import tests.test_Lattice
import tests.test_PayoffSpec
import tests.test_MultiStop
import tests.test_DualOptimizer
import tests.test_RevisedSimplex
import tests.test_PrimalLP
import tests.test_Oracles
import tests.test_SkorokhodSolver
import tests.test_MartingaleTransport
import tests.test_RunConfig
import tests.test_cli
import tests.test_acceptance
