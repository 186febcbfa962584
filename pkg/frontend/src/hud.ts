/**
 * Side panel: connection banner, running tallies, episode readout, gesture
 * badge, and the control buttons' enabled state. Pure DOM writes from the
 * view model; no listeners live here.
 */

import type { ViewModel } from "./viewmodel.js";
import { CATEGORY_COLORS } from "./render.js";

export interface HudElements {
  banner: HTMLElement;
  tallies: HTMLElement;
  episode: HTMLElement;
  target: HTMLElement;
  gesture: HTMLElement;
  run: HTMLElement;
  hint: HTMLElement;
  interveneBtn: HTMLButtonElement;
  pauseBtn: HTMLButtonElement;
  resumeBtn: HTMLButtonElement;
  resetBtn: HTMLButtonElement;
  paceInput: HTMLInputElement;
  paceLabel: HTMLElement;
}

export class HudController {
  private lastHintSeq = 0;

  constructor(private el: HudElements) {}

  update(vm: ViewModel): void {
    const el = this.el;
    const f = vm.frame;

    if (vm.status === "open") {
      el.banner.classList.add("hidden");
    } else {
      el.banner.classList.remove("hidden");
      el.banner.textContent = vm.status === "connecting"
        ? "connecting..."
        : "disconnected, retrying...";
    }

    if (f !== null) {
      const t = f.tallies;
      el.tallies.textContent =
        `SR ${t.sr.toFixed(3)}  SPL ${t.spl.toFixed(3)}  episodes ${t.n}`;
      const e = f.episode;
      const outcome = e.done ? (e.success ? "success" : "failure") : "running";
      const reward = f.last_reward === null ? "-" : f.last_reward.toFixed(3);
      el.episode.textContent =
        `steps ${e.steps}  stops ${e.stops}  reward ${reward}  ${outcome}` +
        (f.paused ? "  [paused]" : "");
      el.target.textContent =
        `target: category ${f.target.category} instance ${f.target.instance}`;
      el.target.style.borderLeftColor =
        CATEGORY_COLORS[f.target.category % CATEGORY_COLORS.length];
      el.run.textContent =
        `${f.condition}  ${f.scene.scene_type} ${f.scene.scene_id}  pace ${f.pace}/s`;
      el.gesture.textContent = f.gesture_kind ?? "no gesture";
      el.gesture.classList.toggle("pulse", f.gesture_kind === "intervention");
      el.paceLabel.textContent = `${f.pace} steps/s`;
    }

    const live = vm.status === "open" && vm.hasActiveEpisode();
    el.interveneBtn.disabled = !live;
    el.pauseBtn.disabled = !live || f === null || f.paused;
    el.resumeBtn.disabled = !live || f === null || !f.paused;
    el.resetBtn.disabled = vm.status !== "open";

    if (vm.hintSeq !== this.lastHintSeq) {
      this.lastHintSeq = vm.hintSeq;
      el.hint.textContent = vm.hint;
      // retrigger the css animation
      el.hint.classList.remove("flash");
      void el.hint.offsetWidth;
      el.hint.classList.add("flash");
    }
  }
}
