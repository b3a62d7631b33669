from .checks import Mode, semigroup_checks, time_average
from .oracles import (
    OracleError,
    SubGenerator,
    chain_subgenerator,
    eig_decay_oracle,
    fd_subgenerator,
    hitting_time_oracle,
    subgenerator_for,
    transition_oracle,
)
from .sim import SimEnsemble, YaglomReport, simulate, yaglom_report
