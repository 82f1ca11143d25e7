"""Population-coded spiking memory for knowledge-graph triples.

Symbols are engrams (fixed neuron subsets) in one arena of leaky
integrate-and-fire neurons; triples are stored as STDP-shaped synapses
between engrams and read back with a similarity readout.
"""

__version__ = "0.1.0"

from .config import Config, ConfigError, load_config  # noqa: E402
from .kg import Triple  # noqa: E402
from .network import Network  # noqa: E402

__all__ = ["Config", "ConfigError", "load_config", "Network", "Triple", "__version__"]
