"""LiDAR range-image semantic segmentation with a range-aware dual decoder,
weighted-distance DBSCAN instances, IoU evaluation and a fog model."""

from rangeseg.clustering import DbscanParams, InstanceLabeling, cluster_frame, dbscan, weighted_distance
from rangeseg.evaluation import ConfusionMatrix, EvalReport, analyze_row_ranges, iou, miou
from rangeseg.fog import FogParams, defog, fog_simulate
from rangeseg.losses import LossConfig, combined_loss, cross_entropy, lovasz_softmax, total_loss
from rangeseg.net import NetConfig, RangeAwareNet
from rangeseg.pointcloud_io import BoxLabel, ObjectClass, Point, PointCloud, label_points
from rangeseg.projection import ProjectionConfig, RangeImage, encode_frame
from rangeseg.schedule import ScheduleConfig, lr_at, momentum_at
from rangeseg.training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BoxLabel", "ConfusionMatrix", "DbscanParams", "EvalReport", "FogParams", "InstanceLabeling",
    "LossConfig", "NetConfig", "ObjectClass", "Point", "PointCloud", "ProjectionConfig",
    "RangeAwareNet", "RangeImage", "ScheduleConfig", "TrainConfig", "analyze_row_ranges",
    "cluster_frame", "combined_loss", "cross_entropy", "dbscan", "defog", "encode_frame",
    "fog_simulate", "iou", "label_points", "lovasz_softmax", "lr_at", "miou", "momentum_at",
    "total_loss", "train", "weighted_distance",
]
