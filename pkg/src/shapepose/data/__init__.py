from .io import (CorruptFileError, DatasetManifest, ManifestEntry, Sample, ValidationError,
                 check_split_discipline, load_sample, read_manifest, read_sample, write_sample)
from .mesh import CATEGORIES, Mesh, make_instance, sample_mesh_to_pointcloud
from .occlusion import DIRECTIONS, occlude, occlusion_block
from .synthetic import GeneratorSpec, generate_synthetic_dataset, load_generator_spec
