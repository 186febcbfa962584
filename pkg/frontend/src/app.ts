/**
 * Entry point: wires the socket, view model, canvas, and controls together.
 * Every frame drawn comes straight from the latest server snapshot.
 */

import { ViewModel } from "./viewmodel.js";
import { SocketClient } from "./net.js";
import { HudController, HudElements } from "./hud.js";
import { drawFrame } from "./render.js";
import { fitCalibration, canvasToWorld, bearingDeg, inRoom } from "./geometry.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

function wsUrl(): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${location.host}/ws`;
}

function main(): void {
  const canvas = byId<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("canvas 2d context unavailable");

  const hud = new HudController({
    banner: byId("banner"),
    tallies: byId("tallies"),
    episode: byId("episode"),
    target: byId("target"),
    gesture: byId("gesture"),
    run: byId("run"),
    hint: byId("hint"),
    interveneBtn: byId<HTMLButtonElement>("intervene"),
    pauseBtn: byId<HTMLButtonElement>("pause"),
    resumeBtn: byId<HTMLButtonElement>("resume"),
    resetBtn: byId<HTMLButtonElement>("reset"),
    paceInput: byId<HTMLInputElement>("pace"),
    paceLabel: byId("pace-label"),
  } satisfies HudElements);

  const vm = new ViewModel();
  const client = new SocketClient(wsUrl(), {
    onMsg: (msg) => vm.applyServer(msg),
    onStatus: (status) => {
      const wasOpen = vm.status === "open";
      vm.setStatus(status);
      // a (re)connected session has no episode yet; start one
      if (status === "open" && !wasOpen) {
        vm.clearMarker();
        client.send({ type: "reset" });
      }
    },
  });

  const calibration = () => {
    const scene = vm.frame!.scene;
    return fitCalibration(scene.width_m, scene.height_m, canvas.width, canvas.height);
  };

  canvas.addEventListener("click", (ev) => {
    if (vm.frame === null) return;
    if (!vm.hasActiveEpisode()) {
      vm.flash("no active episode; press reset");
      return;
    }
    const rect = canvas.getBoundingClientRect();
    const cx = (ev.clientX - rect.left) * (canvas.width / rect.width);
    const cy = (ev.clientY - rect.top) * (canvas.height / rect.height);
    const [x, y] = canvasToWorld(calibration(), cx, cy);
    const scene = vm.frame.scene;
    if (!inRoom(x, y, scene.width_m, scene.height_m)) {
      vm.flash("click inside the room to point");
      return;
    }
    const anchor = vm.anchor();
    if (anchor === null) return;
    vm.placeMarker(x, y);
    client.send({ type: "point", bearing_deg: bearingDeg(anchor[0], anchor[1], x, y) });
  });

  byId<HTMLButtonElement>("reset").addEventListener("click", () => {
    vm.clearMarker();
    client.send({ type: "reset" });
  });
  byId<HTMLButtonElement>("pause").addEventListener("click", () => {
    client.send({ type: "pause" });
  });
  byId<HTMLButtonElement>("resume").addEventListener("click", () => {
    client.send({ type: "resume" });
  });
  byId<HTMLButtonElement>("intervene").addEventListener("click", () => {
    client.send({ type: "intervene" });
  });
  byId<HTMLInputElement>("pace").addEventListener("change", (ev) => {
    const sps = Number((ev.target as HTMLInputElement).value);
    if (Number.isFinite(sps) && sps > 0) client.send({ type: "set_pace", sps });
  });

  const tick = () => {
    if (vm.frame !== null) {
      drawFrame(ctx, vm.frame, vm.marker, calibration(), canvas.width, canvas.height);
    }
    hud.update(vm);
    requestAnimationFrame(tick);
  };

  client.connect();
  requestAnimationFrame(tick);
}

main();
