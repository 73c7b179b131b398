"""Byte-stable Kubernetes documents for worker pods.

Pods carry CPU requests only (Burstable QoS) and a ``NotRequired`` resize
policy so requests can be changed in place without a restart.
"""

from __future__ import annotations

import ipaddress
import json
import re
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .alloc import MIN_REQUEST, AllocationPlan
from .errors import InputError

DEFAULT_IMAGE = "openfoam-k8s:v10"
CONTAINER = "openfoam"
APP = "openfoam"
_DNS_LABEL = re.compile(r"^[a-z0-9]([-a-z0-9]*[a-z0-9])?$")

POD_TEMPLATE = """\
apiVersion: v1
kind: Pod
metadata:
  name: {name}
  labels:
    app: {app}
    role: worker
    sim: {sim}
spec:
  containers:
  - name: {container}
    image: {image}
    resources:
      requests:
        cpu: "{cpu}m"
      # No limits: Burstable QoS
    resizePolicy:
    - resourceName: cpu
      restartPolicy: NotRequired
"""

CONFIGMAP_TEMPLATE = """\
apiVersion: v1
kind: ConfigMap
metadata:
  name: {name}
  labels:
    app: {app}
    sim: {sim}
data:
  hostfile: |
{lines}"""


def _check_name(name: str) -> str:
    if len(name) > 63 or not _DNS_LABEL.match(name):
        raise InputError(f"invalid Kubernetes name {name!r}")
    return name


def _check_sim(sim_id: str) -> str:
    if not re.match(r"^[A-Za-z0-9]([-A-Za-z0-9]*[A-Za-z0-9])?$", sim_id or ""):
        raise InputError(f"invalid simulation id {sim_id!r}")
    return sim_id


def pod_name(sim_id: str, rank: int) -> str:
    if rank < 0:
        raise InputError("rank must be non-negative")
    return _check_name(f"of-worker-{_check_sim(sim_id).lower()}-{rank}")


@dataclass(frozen=True)
class PodManifestSpec:
    sim_id: str
    rank: int
    cpu_request_millicores: int
    image: str = DEFAULT_IMAGE
    labels: dict = field(default_factory=lambda: {"app": APP, "role": "worker"})

    @property
    def name(self) -> str:
        return pod_name(self.sim_id, self.rank)


def emit_pod_manifest(spec: PodManifestSpec) -> str:
    if spec.cpu_request_millicores < MIN_REQUEST:
        raise InputError(f"CPU request {spec.cpu_request_millicores}m is below {MIN_REQUEST}m")
    if not spec.image or any(c.isspace() for c in spec.image):
        raise InputError(f"invalid image {spec.image!r}")
    return POD_TEMPLATE.format(
        name=spec.name, app=spec.labels.get("app", APP), sim=_check_sim(spec.sim_id),
        container=CONTAINER, image=spec.image, cpu=int(spec.cpu_request_millicores))


def emit_hostfile_configmap(sim_id: str, ips: Sequence[str]) -> str:
    if not ips:
        raise InputError("hostfile needs at least one address")
    seen = set()
    for ip in ips:
        try:
            ipaddress.ip_address(ip)
        except ValueError:
            raise InputError(f"invalid address {ip!r}") from None
        if ip in seen:
            raise InputError(f"duplicate address {ip}")
        seen.add(ip)
    lines = "".join(f"    {ip} slots=1\n" for ip in ips)
    name = _check_name(f"hostfile-{_check_sim(sim_id).lower()}")
    return CONFIGMAP_TEMPLATE.format(name=name, app=APP, sim=sim_id, lines=lines)


def resize_patch(new_millicpu: int) -> dict:
    if new_millicpu < MIN_REQUEST:
        raise InputError(f"CPU request {new_millicpu}m is below {MIN_REQUEST}m")
    return {"spec": {"containers": [
        {"name": CONTAINER, "resources": {"requests": {"cpu": f"{int(new_millicpu)}m"}}}]}}


def emit_resize_patch(pod: str, new_millicpu: int) -> str:
    """Strategic-merge body for the pod ``resize`` subresource, e.g.
    ``kubectl patch pod <pod> --subresource resize --patch "$(cat body)"``.
    Only the container CPU request is touched."""
    _check_name(pod)
    return json.dumps(resize_patch(new_millicpu), separators=(",", ":")) + "\n"


def kubectl_resize_command(pod: str, new_millicpu: int) -> str:
    body = emit_resize_patch(pod, new_millicpu).strip()
    return f"kubectl patch pod {pod} --subresource resize --patch {shlex.quote(body)}"


def emit_mpirun_command(sim_id: str, n_ranks: int, hostfile_path: str,
                        solver: str = "rhoSimpleFoam") -> str:
    if n_ranks < 1:
        raise InputError("need at least one rank")
    if not hostfile_path:
        raise InputError("hostfile path is required")
    _check_sim(sim_id)
    args = ["mpirun", "--allow-run-as-root", "-np", str(n_ranks),
            "--hostfile", hostfile_path, "--mca", "btl", "tcp,self",
            solver, "-parallel"]
    return " ".join(shlex.quote(a) for a in args)


def write_plan_manifests(sim_id: str, plan: AllocationPlan, out_dir, image: str = DEFAULT_IMAGE) -> list[Path]:
    """Writes ``<out_dir>/<sim>/<pod>.manifest`` for every rank in the plan."""
    d = Path(out_dir) / sim_id.lower()
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for rank, m in plan.per_rank_millicpu.items():
        spec = PodManifestSpec(sim_id, rank, m, image)
        p = d / f"{spec.name}.manifest"
        p.write_text(emit_pod_manifest(spec))
        paths.append(p)
    return paths
