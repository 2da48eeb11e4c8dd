"""Client side of the directory-exchange victim protocol.

The attack engine writes ``req_<id>.txt`` plus image/mask payload files in
the exchange directory; the serving process answers with a ``resp_<id>/``
directory containing pointmaps (and gradient buffers in ``infer+grad``
mode) followed by a ``resp_<id>.done`` sentinel written last. Errors come
back as ``resp_<id>.err`` with a message.
"""

import time
from pathlib import Path

import numpy as np

from .errors import VictimError
from .formats import read_pmap, save_image, save_mask
from .loss import Observation, poc_loss
from .pose import project, world_to_camera
from .victim import VictimResult

LOSS_SPEC = "poc_v1 angles=0,30,60 eps=1e-9"


class BridgeVictim:
    """Victim served over a shared exchange directory.

    ``mode`` is ``infer`` or ``infer+grad``; in gradient mode the response
    must carry per-pixel loss gradients for both input images.
    """

    name = "bridge"

    def __init__(self, exchange_dir, mode="infer+grad", timeout_s=120.0,
                 poll_s=0.05):
        self.exchange = Path(exchange_dir)
        self.exchange.mkdir(parents=True, exist_ok=True)
        self.mode = mode
        self.timeout_s = timeout_s
        self.poll_s = poll_s
        self._next_id = int(time.time() * 1000) % 10 ** 9

    @property
    def provides_gradients(self):
        return self.mode == "infer+grad"

    def _await(self, done, err):
        deadline = time.monotonic() + self.timeout_s
        while time.monotonic() < deadline:
            if err.exists():
                raise VictimError(f"bridge error: {err.read_text().strip()}")
            if done.exists():
                return
            time.sleep(self.poll_s)
        raise VictimError(f"bridge timed out after {self.timeout_s}s")

    def pointmaps(self, view_a, view_b, seed=0):
        rid = self._next_id
        self._next_id += 1
        ex = self.exchange
        paths = {
            "image_a": ex / f"payload_{rid}_a.png",
            "image_b": ex / f"payload_{rid}_b.png",
            "mask_a": ex / f"payload_{rid}_mask_a.png",
            "mask_b": ex / f"payload_{rid}_mask_b.png",
        }
        save_image(paths["image_a"], view_a.image)
        save_image(paths["image_b"], view_b.image)
        save_mask(paths["mask_a"], view_a.disc_mask)
        save_mask(paths["mask_b"], view_b.disc_mask)
        ca = project(view_a.intrinsics, world_to_camera(view_a.pose, np.zeros(3)))
        cb = project(view_b.intrinsics, world_to_camera(view_b.pose, np.zeros(3)))

        lines = [f"mode={self.mode}"]
        lines += [f"{k}={paths[k]}" for k in ("image_a", "image_b", "mask_a", "mask_b")]
        lines += [f"center_a_x={ca[0]:.17g}", f"center_a_y={ca[1]:.17g}",
                  f"center_b_x={cb[0]:.17g}", f"center_b_y={cb[1]:.17g}",
                  f"loss_spec={LOSS_SPEC}"]
        req = ex / f"req_{rid}.txt"
        tmp = ex / f"req_{rid}.txt.tmp"
        tmp.write_text("\n".join(lines) + "\n")
        tmp.rename(req)

        self._await(ex / f"resp_{rid}.done", ex / f"resp_{rid}.err")
        resp = ex / f"resp_{rid}"
        try:
            pm_a = read_pmap(resp / "pointmap_a.pmap")
            pm_b = read_pmap(resp / "pointmap_b.pmap")
        except OSError as exc:
            raise VictimError(f"bridge response incomplete: {exc}") from exc
        grad_a = grad_b = None
        if self.provides_gradients:
            try:
                grad_a = read_pmap(resp / "grad_a.pmap").coords.astype(float)
                grad_b = read_pmap(resp / "grad_b.pmap").coords.astype(float)
            except OSError as exc:
                raise VictimError(f"bridge gradients missing: {exc}") from exc
        return VictimResult(pm_a, pm_b, grad_a=grad_a, grad_b=grad_b)

    def crosscheck_loss(self, view_a, view_b, result, reported_loss, tol=1e-4):
        """Recompute the loss from the served pointmaps and compare against
        the bridge's own value."""
        local = poc_loss(
            Observation(result.pointmap_a, view_a.disc_mask,
                        project(view_a.intrinsics,
                                world_to_camera(view_a.pose, np.zeros(3)))),
            Observation(result.pointmap_b, view_b.disc_mask,
                        project(view_b.intrinsics,
                                world_to_camera(view_b.pose, np.zeros(3)))))
        return abs(local.total - reported_loss) <= tol, local.total
