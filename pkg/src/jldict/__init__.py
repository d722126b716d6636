"""JL-dimensioned supervised projection, shared-dictionary learning and
medoid-based classification."""

from .classify import (ClassifierModel, ClassMedoids, Metrics, classify, classify_batch,
                       compute_medoids, encode, evaluate, predict_codes, update_medoid_online)
from .container import load_model, save_model
from .data import (LabeledDataset, augment_minority, load_csv, load_idx, standardize,
                   stratified_kfold, synth_clusters)
from .dictionary import TrainConfig, TrainReport, init_dictionary, ksvd_sweep, train
from .dimsel import (emit_dimension_curve, jl_dimension_derivative, jl_min_dimension,
                     select_dimension, select_epsilon)
from .embed import (ProjectionModel, distortion_report, fit_mkspca, fit_mspca,
                    one_hot_labels, transform)
from .errors import CorruptModel, InvalidArgument, JLDictError, NumericalFailure, ParseError
from .pipeline import PipelineConfig, cross_validate, fit
from .sparse import SparseCoderConfig, msbl_code

__version__ = "0.1.0"
