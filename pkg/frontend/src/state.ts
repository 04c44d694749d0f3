/** Review state for one capture: per-class decisions, instance rejections,
 * and the completeness guard that keeps partial records off the wire. */

import type { CaptureDoc, Decision, InstanceDoc, VerdictBody } from "./types.js";

export class ReviewStateError extends Error {}

/** Thrown by toWire(); callers must never see a partial record serialize. */
export class IncompleteReviewError extends ReviewStateError {
  constructor(readonly missing: string[]) {
    super(`undecided classes: ${missing.join(", ")}`);
  }
}

export class CaptureReview {
  private readonly decisions = new Map<string, Decision>();
  private readonly rejected = new Map<string, Set<number>>();
  widthAccepted = true;

  constructor(readonly capture: CaptureDoc) {}

  /** Distinct detected classes, stable order for rendering. */
  classNames(): string[] {
    return [...new Set(this.capture.instances.map((i) => i.class))].sort();
  }

  instancesOf(name: string): InstanceDoc[] {
    return this.capture.instances.filter((i) => i.class === name);
  }

  decisionFor(name: string): Decision | undefined {
    return this.decisions.get(name);
  }

  decide(name: string, decision: Decision): void {
    if (!this.classNames().includes(name)) {
      throw new ReviewStateError(`class not detected here: ${name}`);
    }
    this.decisions.set(name, decision);
    if (decision !== "agree") {
      // rejections only qualify an AGREE; anything else resets them
      this.rejected.delete(name);
    }
  }

  /** Flip one instance in or out of the rejection set of an AGREE. */
  toggleRejection(name: string, instanceId: number): void {
    if (this.decisions.get(name) !== "agree") {
      throw new ReviewStateError(`rejections need an AGREE on ${name}`);
    }
    if (!this.instancesOf(name).some((i) => i.instance_id === instanceId)) {
      throw new ReviewStateError(`no instance ${instanceId} in ${name}`);
    }
    const set = this.rejected.get(name) ?? new Set<number>();
    if (set.has(instanceId)) {
      set.delete(instanceId);
    } else {
      set.add(instanceId);
    }
    this.rejected.set(name, set);
  }

  isRejected(name: string, instanceId: number): boolean {
    return this.rejected.get(name)?.has(instanceId) ?? false;
  }

  /** Classes still waiting for a decision. Empty means submittable. */
  undecided(): string[] {
    return this.classNames().filter((name) => !this.decisions.has(name));
  }

  isComplete(): boolean {
    return this.undecided().length === 0;
  }

  toWire(): VerdictBody {
    const missing = this.undecided();
    if (missing.length > 0) {
      throw new IncompleteReviewError(missing);
    }
    const verdicts: VerdictBody["verdicts"] = {};
    for (const [name, decision] of this.decisions) {
      // the wire wants positions in the class's instance list, not ids
      const order = this.instancesOf(name).map((i) => i.instance_id);
      verdicts[name] = {
        verdict: decision,
        rejected_instances: [...(this.rejected.get(name) ?? [])]
          .map((id) => order.indexOf(id))
          .sort((a, b) => a - b),
      };
    }
    return {
      capture_id: this.capture.capture_id,
      width_accepted: this.widthAccepted,
      verdicts,
    };
  }
}
