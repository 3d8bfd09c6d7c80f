"""Ground-truth tabletop scene: probe motion, contact detection and measurements."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..exploration import NoTarget, ProbePlan, gel_orientation, plan_probe_poses, select_target
from ..freespace import FreeSpaceMap, interpolate_poses
from ..ft_localizer import FtWindow, NoEstimate, ft_contact_normal, ft_localize
from ..geometry.priors import Hypothesis, load_manifest, primitive_library, sample_feature_points
from ..geometry.transforms import Pose, axis_angle_matrix
from ..observations import StepObservation
from ..sensing import EmptyPatchError, OrientedContact, Probe, point_noise_scale, simulate_patch, simulate_wrench, sweep_vertices


@lru_cache(maxsize=4)
def _cached_library(n_features, seed, bin_width):
    return tuple(primitive_library(n_features, seed, bin_width))


def load_priors(cfg):
    p = cfg.priors
    if p.manifest:
        return load_manifest(p.manifest, p.n_features, p.bin_width)
    return list(_cached_library(p.n_features, p.seed, p.bin_width))


@lru_cache(maxsize=1)
def default_probe():
    return Probe()


def sample_truth(cfg, priors, rng, class_id=None) -> Hypothesis:
    """Object resting on the table with a random yaw and a small planar offset."""
    w = cfg.world
    c = int(rng.integers(len(priors))) if class_id is None else int(class_id)
    yaw = rng.uniform(-np.pi, np.pi)
    off = rng.uniform(-w.placement_jitter, w.placement_jitter, 2)
    t = np.array([w.search_center[0] + off[0], w.search_center[1] + off[1], cfg.likelihood.table_height + priors[c].resting_height])
    return Hypothesis(c, Pose.from_matrix(axis_angle_matrix([0, 0, 1], yaw), t))


@dataclass
class Contact:
    pose: Pose
    point: np.ndarray
    object_normal: np.ndarray
    on_gel: bool


class World:
    def __init__(self, cfg, priors, truth: Hypothesis, rng, probe: Probe | None = None):
        self.cfg = cfg
        self.priors = priors
        self.truth = truth
        self.rng = rng
        self.probe = probe or default_probe()
        self.fmap = FreeSpaceMap()
        self.table = cfg.likelihood.table_height
        prior = priors[truth.class_id]
        self.shape = prior.shape
        pts, _ = sample_feature_points(prior.shape, cfg.world.truth_samples, seed=prior.seed + 7)
        self.truth_points = truth.pose.apply(pts)
        self.truth_center = truth.pose.translation
        self.truth_radius = prior.radius + 1e-3
        self.probe_radius = float(np.linalg.norm(self.probe.vertices - self.probe.center, axis=1).max())
        self.lo = self.fmap.lo
        self.hi = self.fmap.lo + self.fmap.size
        self.last_wrenches = []
        hw, L = self.probe.half_width, self.probe.length
        self.corners = np.array([[x, y, z] for x in (-hw, hw) for y in (-hw, hw) for z in (-L, 0.0)])

    # --- geometry checks ----------------------------------------------------

    def truth_sdf(self, world_pts):
        return self.shape.sdf(self.truth.pose.inverse().apply(world_pts))

    def penetration(self, pose: Pose):
        """Deepest overlap between probe and object: ``(depth, world_point)``; depth <= 0 means apart."""
        centre = pose.apply(self.probe.center[None])[0]
        gap = np.linalg.norm(centre - self.truth_center) - self.probe_radius - self.truth_radius
        if gap > 0:
            return -gap, None
        verts = pose.apply(self.probe.vertices)
        d_probe = self.truth_sdf(verts)
        k = int(np.argmin(d_probe))
        best_depth, best_pt = -d_probe[k], verts[k]
        local_truth = pose.inverse().apply(self.truth_points)
        d_truth = self.probe.sdf(local_truth)
        j = int(np.argmin(d_truth))
        if -d_truth[j] > best_depth:
            best_depth, best_pt = -d_truth[j], self.truth_points[j]
        return best_depth, best_pt

    def hits_table(self, pose: Pose) -> bool:
        return bool(pose.apply(self.corners)[:, 2].min() < self.table)

    def in_workspace(self, pose: Pose) -> bool:
        v = pose.apply(self.corners)
        return bool(np.all(v >= self.lo) and np.all(v <= self.hi))

    def reachable(self, plan: ProbePlan, normal) -> bool:
        """The approach corridor and the touch stroke stay in the workspace and above the table; the corridor is collision free."""
        start = Pose(plan.pre_touch.translation + self.cfg.world.approach_clearance * np.asarray(normal), plan.pre_touch.rotation)
        # orientation is fixed along the stroke and the stroke never rises, so the touch pose is the lowest one
        for pose in (start, plan.pre_touch, plan.touch):
            if not self.in_workspace(pose) or self.hits_table(pose):
                return False
        for pose in interpolate_poses(start, plan.pre_touch, 0.01):
            if self.penetration(pose)[0] > -0.002:
                return False
        return True

    # --- motion -------------------------------------------------------------

    def move(self, pose_a: Pose, pose_b: Pose, detect=True):
        """Move along a segment, carving free space until contact or a blocking collision.

        Returns ``(end_pose, contact_or_None, blocked, freed_indices)``.
        """
        w = self.cfg.world
        poses = interpolate_poses(pose_a, pose_b, w.sweep_step, self.probe_radius + 0.05)
        freed = []
        prev = poses[0]
        contact = None
        blocked = False
        end = poses[-1]
        for k, pose in enumerate(poses):
            if self.hits_table(pose) or not self.in_workspace(pose):
                blocked = True
                end = prev
                break
            if detect:
                depth, _ = self.penetration(pose)
                if depth > 0:
                    end = self._bisect(prev, pose) if k > 0 else pose
                    contact = self._contact_at(end)
                    break
            freed.append(self.fmap.mark_free(sweep_vertices(pose, self.probe.sweep_mesh, w.sweep_margin)))
            prev = pose
        freed = np.concatenate(freed) if freed else np.zeros(0, dtype=np.int64)
        return end, contact, blocked, freed

    def _bisect(self, a: Pose, b: Pose, iters=14):
        for _ in range(iters):
            t = 0.5 * (a.translation + b.translation)
            qa, qb = a.rotation, b.rotation
            q = qa + qb if qa @ qb >= 0 else qa - qb
            mid = Pose(t, q)
            if self.penetration(mid)[0] > 0:
                b = mid
            else:
                a = mid
        return b

    def _contact_at(self, pose: Pose) -> Contact:
        _, pt = self.penetration(pose)
        local = pose.inverse().apply(pt[None])
        on_probe = pose.apply(self.probe.project(local))[0]
        tl = self.truth.pose.inverse().apply(on_probe[None])
        _, n, _ = self.shape.sdf_normal(tl)
        normal = self.truth.pose.rotate(n[0])
        return Contact(pose, on_probe, normal, self.probe.on_gel(self.probe.project(local)[0]))

    # --- measurements -------------------------------------------------------

    def measure_ft(self, contact: Contact):
        w, nz = self.cfg.world, self.cfg.noise
        window = FtWindow(w.ft_window)
        normals = []
        for _ in range(w.ft_window):
            wr = simulate_wrench(
                None, None, contact.pose, self.probe, contact.point, w.contact_force,
                nz.friction_angle_max_deg, self.rng, nz.force_sigma, nz.torque_sigma, surface_normal=contact.object_normal,
            )
            self.last_wrenches.append([wr.force.tolist(), wr.torque.tolist(), contact.pose.to_list()])
            try:
                window.push(ft_localize(wr, self.probe.vertices, self.probe.contact_normals, w.ft_lambda, w.ft_force_threshold, contact.pose))
            except NoEstimate:
                continue
            normals.append(ft_contact_normal(wr, contact.pose))
        if not len(window):
            return None
        point = window.mean()
        if nz.ft_point_sigma > 0:
            point = point + self.rng.normal(0.0, point_noise_scale(nz.ft_point_sigma), 3)
        return OrientedContact(point, np.mean(normals, axis=0), "ft", "none")

    def measure_gelsight(self, contact: Contact):
        aligned = self.rng.random() < self.cfg.world.alignment_success
        if not (contact.on_gel and aligned):
            return None
        try:
            return simulate_patch(self.truth, self.priors, contact.point, -contact.object_normal, self.cfg.noise, self.rng)
        except EmptyPatchError:
            return None

    # --- one action cycle ---------------------------------------------------

    def bootstrap_plan(self):
        w = self.cfg.world
        xy = np.asarray(w.search_center) + self.rng.uniform(-w.bootstrap_jitter, w.bootstrap_jitter, 2)
        top = np.array([xy[0], xy[1], self.table + w.bootstrap_height])
        R = gel_orientation([0, 0, -1], 0.0)
        start = Pose.from_matrix(R, top)
        touch = Pose.from_matrix(R, [xy[0], xy[1], self.table + 0.002])
        return start, touch, None, None

    def choose_plan(self, map_hyp, contact_pts, unreachable):
        """Returns ``(approach_start, touch, plan_or_None, target_or_None)``; targets with no reachable roll go to ``unreachable``."""
        w = self.cfg.world
        if map_hyp is None:
            return self.bootstrap_plan()
        prior = self.priors[map_hyp.class_id]
        pts = map_hyp.pose.apply(prior.feature_points)
        nrm = map_hyp.pose.rotate(prior.feature_normals)
        for _ in range(w.max_target_attempts):
            try:
                target = select_target(pts, nrm, contact_pts, unreachable, self.table + w.target_min_height)
            except NoTarget:
                break
            for roll in w.rolls_deg:
                plan = plan_probe_poses(target.point, target.normal, np.deg2rad(roll), self.probe.gel_axis, contact_pts)
                if self.reachable(plan, target.normal):
                    start = Pose(plan.pre_touch.translation + w.approach_clearance * target.normal, plan.pre_touch.rotation)
                    return start, plan.touch, plan, target
            unreachable.append(np.asarray(target.point))
        return self.bootstrap_plan()

    def action_cycle(self, step, map_hyp, contact_pts, unreachable) -> StepObservation:
        self.last_wrenches = []
        start, touch, plan, target = self.choose_plan(map_hyp, contact_pts, unreachable)
        freed = []
        path = [start]
        pre = plan.pre_touch if plan is not None else start
        if plan is not None:
            _, c, blocked, f = self.move(start, pre)
            freed.append(f)
        end, contact, blocked, f = self.move(pre, touch)
        freed.append(f)
        path.append(end)
        if contact is None and not blocked and plan is not None and plan.fallback is not plan.touch:
            end, contact, blocked, f = self.move(end, plan.fallback)
            freed.append(f)
            path.append(end)
        if contact is None and target is not None:
            unreachable.append(np.asarray(target.point))
        obs = StepObservation(step, [], [], np.unique(np.concatenate(freed)), path)
        if contact is not None:
            ft = self.measure_ft(contact)
            if ft is not None:
                obs.ft_contacts.append(ft)
            patch = self.measure_gelsight(contact)
            if patch is not None:
                obs.gelsight_patches.append(patch)
        return obs
