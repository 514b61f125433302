"""Temporal-needle video analysis toolkit."""

from .align import (AffineTransform, FundamentalMatrix, TemporalModel,
                    collect_matches, default_shift_range, integer_shift,
                    ransac_affine, ransac_fundamental, sampson_distance,
                    subframe_shift)
from .cluster import (ClusterResult, RegionGrowState, affinity,
                      cluster_collection, normalized_cut_labels, region_grow,
                      sample_count)
from .detect import ScoreCurve, find_detections, vote_centers
from .needle import (DescriptorField, NeedleParams, compute_field,
                     field_from_video, load_field, misalignment_bound,
                     needle_at_scale, patch_ssd, save_field)
from .pyramid import TemporalPyramid, build_pyramid, temporal_downsample
from .significance import (Codebook, ScoredMatch, build_codebook,
                           codebook_distance, informativeness, kmeans_words,
                           load_codebook, match_likelihood, reference_distance,
                           save_codebook, saving_in_bits, select_informative)
from .synthgen import (MotionScript, generate, invert_appearance, shift_time,
                       warp_affine)
from .video_io import Video, load_video, quantize, save_video

__version__ = "0.1.0"

__all__ = [
    "AffineTransform",
    "Codebook",
    "ClusterResult",
    "DescriptorField",
    "FundamentalMatrix",
    "MotionScript",
    "NeedleParams",
    "RegionGrowState",
    "ScoreCurve",
    "ScoredMatch",
    "TemporalModel",
    "TemporalPyramid",
    "Video",
    "affinity",
    "build_codebook",
    "build_pyramid",
    "cluster_collection",
    "codebook_distance",
    "collect_matches",
    "compute_field",
    "default_shift_range",
    "field_from_video",
    "find_detections",
    "generate",
    "informativeness",
    "integer_shift",
    "invert_appearance",
    "kmeans_words",
    "load_codebook",
    "load_field",
    "load_video",
    "match_likelihood",
    "misalignment_bound",
    "needle_at_scale",
    "normalized_cut_labels",
    "patch_ssd",
    "quantize",
    "ransac_affine",
    "ransac_fundamental",
    "reference_distance",
    "region_grow",
    "sample_count",
    "sampson_distance",
    "save_codebook",
    "save_field",
    "save_video",
    "saving_in_bits",
    "select_informative",
    "shift_time",
    "subframe_shift",
    "temporal_downsample",
    "vote_centers",
    "warp_affine",
]
