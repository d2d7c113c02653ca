from cinembed.graph_core import Graph, ProximityMatrix, build_transition, build_proximity, laplacian
from cinembed.label_store import LabelTable, LabeledView, SplitPlan, sample_split
from cinembed.rsdne_solver import RsdneConfig, RsdneVariant, solve
from cinembed.rect_model import RectConfig, train as train_rect
from cinembed.eval_harness import ClassifierConfig, run_experiment, summarize, render_report
from cinembed.data_io import DatasetBundle, load_dataset, generate_sbm, generate_random_graph
import cinembed.cinembed_utils as utils
from cinembed._version import version

__version__ = version
