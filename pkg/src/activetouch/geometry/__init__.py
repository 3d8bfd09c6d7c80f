from .transforms import Pose
from .shapes import Box, Cylinder, Extrusion, LPrism, Sphere
from .mesh import MeshShape, TriMesh, load_mesh
from .pairs import PairFeature, PairTable, build_pair_table, pair_feature
from .priors import (
    Hypothesis,
    ObjectPrior,
    load_manifest,
    make_prior,
    primitive_library,
    sample_feature_points,
    sdf_normal,
    sdf_query,
)
