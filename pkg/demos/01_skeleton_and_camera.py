# Build the 24-joint skeleton, pose it and look at it through the camera.
import numpy as np

from lgdfit.camera import CameraParams, project
from lgdfit.kinematics import JOINT_NAMES, PoseShape, default_skeleton, forward_kinematics

model = default_skeleton()
print("joints:", model.joint_count, " shape coefficients:", model.n_betas)
print("bone lengths at the mean shape:", np.round(model.bone_lengths(), 3))

rest = forward_kinematics(model, PoseShape(np.zeros((23, 3)), np.zeros(10)))
print("rest pose height (head above pelvis):", rest[JOINT_NAMES.index("head"), 1])

# bend the left elbow by 90 degrees; only the forearm and hand move
theta = np.zeros((23, 3))
theta[JOINT_NAMES.index("l_elbow") - 1] = [0.0, 0.0, np.pi / 2]
bent = forward_kinematics(model, PoseShape(theta, np.zeros(10)))
moved = np.flatnonzero(np.linalg.norm(bent - rest, axis=1) > 1e-12)
print("joints that moved:", [JOINT_NAMES[j] for j in moved])

# shape coefficients stretch or shrink each bone by a few percent; topology is untouched
stretched = model.bone_lengths(np.r_[2.0, np.zeros(9)]) / model.bone_lengths()
print("bone length ratios for beta_0 = 2:", np.round(stretched, 3))

cam = CameraParams(rotation=np.array([0.0, 0.4, 0.0]), translation=np.array([0.1, -0.2]), scale=1.2)
uv = project(bent, cam)
print("projected left hand:", uv[JOINT_NAMES.index("l_hand")])
