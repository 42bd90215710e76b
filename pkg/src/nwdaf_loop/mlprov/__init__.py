from .dataset import read_feature_csv, split_holdout, write_feature_csv
from .forest import (
    ANOMALOUS,
    BENIGN,
    DecisionTree,
    FeatureWidthMismatch,
    ForestModel,
    ModelDescriptor,
    train_forest,
)
from .registry import MlSubscription, Registry, UnknownModel
from .service import MlProvisionService
