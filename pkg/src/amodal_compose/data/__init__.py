from .classical import color_transfer, inpaint_background
from .factories import (
    CompTrainingPair,
    InpaintCache,
    OcclusionSample,
    ShapeSample,
    make_comp_pair,
    make_shape_sample,
    sample_occlusion,
    sample_occlusion_retrying,
)
from .manifest import (
    DatasetManifest,
    Instance,
    ManifestEntry,
    iterate_instances,
    load_all_instances,
    load_manifest,
    save_manifest,
)
from .synthetic import generate_scene, generate_synthetic_dataset, make_background

__all__ = [
    "color_transfer",
    "inpaint_background",
    "CompTrainingPair",
    "InpaintCache",
    "OcclusionSample",
    "ShapeSample",
    "make_comp_pair",
    "make_shape_sample",
    "sample_occlusion",
    "sample_occlusion_retrying",
    "DatasetManifest",
    "Instance",
    "ManifestEntry",
    "iterate_instances",
    "load_all_instances",
    "load_manifest",
    "save_manifest",
    "generate_scene",
    "generate_synthetic_dataset",
    "make_background",
]
