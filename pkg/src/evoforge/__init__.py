"""Evolutionary search where a language model proposes offspring.

Candidates are either direct solutions (TSP tours) or heuristics written in a
small expression language (bin-packing scoring functions).
"""

__version__ = "0.1.0"
