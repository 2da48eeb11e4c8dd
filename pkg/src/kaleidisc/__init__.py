"""Radially symmetric background discs against multi-view pose estimation:
construction, planar-scene rendering, the orientation-consistency loss,
a black-box attack loop, and relative-pose metrics."""

from .attack import (AttackConfig, AttackTrace, GradientEstimate, gamut_clip,
                     estimate_gradient_spsa, run_attack, sign_update)
from .disc import (DiscImage, DiscSpec, compose_disc, disc_corners,
                   extract_segment, segment_corners, segment_dims,
                   solve_perspective, symmetry_score)
from .loss import (BisectionLine, LossValue, Observation, RegionSplit,
                   average_flow_direction, bisect, coordinate_variation,
                   flow_direction, oc_loss, poc_loss,
                   verify_projection_correspondence)
from .metrics import (MetricsReport, compute_report, rotation_angle,
                      translation_angle)
from .pose import (CameraPose, Intrinsics, look_at_pose, project,
                   projected_orientation, relative_rotation, world_to_camera)
from .scene import (Occluder, Pointmap, RenderedView, SceneConfig,
                    ViewpointRanges, augment, render_view, sample_viewpoint)
from .victim import (BuiltinVictim, EstimatedRelPose, Match, PlaneInCamera,
                     VictimConfig, detect_and_match, estimate_pose,
                     plane_in_camera, pointmaps_from_estimate)

__version__ = "0.1.0"
