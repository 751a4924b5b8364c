from .predictor import PricePredictor, load_predictor, predict_center, save_predictor
from .conformal import (
    InsufficientCalibration,
    UncertaintyBox,
    conformal_calibrate,
    marginal_coverage,
    min_calibration_samples,
)
from .dispatch import (
    DispatchResult,
    backward_through_dispatch,
    dispatch_layer,
    dispatch_template,
    nominal_dispatch,
    robust_dispatch,
    robust_objective,
    task_loss_grad,
)
from .trainer import E2eConfig, E2eLog, E2eModel, EpochRecord, sample_task_loss, task_loss, train_e2e
from dqn import TrainingDiverged

__all__ = [
    'PricePredictor', 'load_predictor', 'predict_center', 'save_predictor',
    'InsufficientCalibration', 'UncertaintyBox', 'conformal_calibrate', 'marginal_coverage',
    'min_calibration_samples',
    'DispatchResult', 'backward_through_dispatch', 'dispatch_layer', 'dispatch_template',
    'nominal_dispatch', 'robust_dispatch', 'robust_objective', 'task_loss_grad',
    'E2eConfig', 'E2eLog', 'E2eModel', 'EpochRecord', 'sample_task_loss', 'task_loss', 'train_e2e',
    'TrainingDiverged',
]
