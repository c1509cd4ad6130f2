"""Not-to-recommend training for sequential retrieval recommenders, with a
simulated-user environment and counterfactual responsiveness measurement."""

from negrec.catalog import Corpus, Item, SizingError, generate_corpus
from negrec.model import (
    FeatureConfig,
    ModelParams,
    ModelPolicy,
    encode_state,
    init_params,
    load_checkpoint,
    retrieve_top_k,
    save_checkpoint,
)
from negrec.objective import FULL, LabeledExample, Sampled, Sign, batch_gradients, batch_loss
from negrec.responsiveness import Action, Mode, ResponsivenessReport, measure_responsiveness
from negrec.simenv import Event, RandomPolicy, SimConfig, Trajectory, UserProfile, generate_logs
from negrec.train import TrainConfig, Variant, train

__version__ = "0.1.0"
