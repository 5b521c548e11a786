"""Window classifier, trainer, evaluator, compactor and artifact format."""
from intec.model.artifact import ModelArtifact, load_artifact, save_artifact
from intec.model.classifier import WindowClassifier, train_classifier
from intec.model.compress import (LiteModel, QuantizedTensor, classifier_to_bytes,
                                  compress_model, lite_from_bytes, lite_infer,
                                  lite_to_bytes, quantize_tensor)
from intec.model.evaluate import EvalReport, evaluate, report_from_predictions
from intec.model.training import EarlyStopping, TrainConfig, TrainHistory, fit_with_early_stopping

__all__ = [
    "EarlyStopping", "EvalReport", "LiteModel", "ModelArtifact", "QuantizedTensor",
    "TrainConfig", "TrainHistory", "WindowClassifier", "classifier_to_bytes",
    "compress_model", "evaluate", "fit_with_early_stopping", "lite_from_bytes",
    "lite_infer", "lite_to_bytes", "load_artifact", "quantize_tensor",
    "report_from_predictions", "save_artifact", "train_classifier",
]
