"""Radiomics feature extraction and feature-conditioned tumour synthesis on 2D slices."""
from .evalstat import SimilarityReport, cosine, family_report, pearson, rankdata, spearman
from .features import (DEFAULT_ROIS, FAMILIES, FAMILY_FEATURES, ROI1, ROI2, ROI3, CohortMatrix,
                       FeatureVector, RoiConfig, cohort_from_vectors, extract_features, read_features,
                       standardize, write_features)
from .firstorder import DiscretizationConfig, compute_first_order, discretize
from .grid import GridGeometry, ImageGrid, LabelGrid, load_grid, save_grid
from .masks import BinaryMask, RoiSpec, boundary_mesh, circular_mask, mask_from_labels
from .shape import compute_shape
from .synth import (BlobParams, TargetSpec, background_fill, harmonic_fill, make_phantom,
                    remove_tumor, render_blob, replace_tumor, synthesize, targets_from_features)
from .texture import build_glcm, build_glszm, glcm_features, glszm_features

__version__ = "0.1.0"
