"""Online correlated selection: selectors, verification oracles and online matching."""

from .automata import AutomatonParams, CombinedOCS, combined_ocs, forest_constructor, forest_ocs
from .core import Selector, exact_event_prob, monte_carlo_event_prob, run, stream
from .flag import FlagOCS, flag_bound, flag_ocs
from .instances import MatchingInstance, MultiWayInstance, TwoWayInstance
from .lp import balance_lp, two_choice_lp
from .matching import balance_matcher, edge_weighted_matcher, offline_optimum, two_choice_greedy
from .multiway import MultiwaySelector, WeightFunction, multiway_selector
from .semi import optimal_semi_ocs, semi_ocs_bound, weighted_two_way

__version__ = "0.1.0"
