"""Network-dependent outcomes: community detection plus clustered GEE inference."""

from netgee.communities import GreedyModularity, LabelPropagation, Oracle, detect, partition_agreement
from netgee.gee import FitOptions, FitResult, WorkingCorrelation, ZMode, fit_gee, fit_naive
from netgee.graph import DirectedGraph, Partition, SbmConfig, sample_sbm
from netgee.model import Link, ModelParams, jacobian, mean

__version__ = "0.1.0"
