/** Adam over the trainable parameter list, with global gradient-norm clipping. */

import { Param } from "./model.js";

export class Adam {
  private readonly m: Float64Array[];
  private readonly v: Float64Array[];
  private t = 0;

  constructor(
    private readonly params: Param[],
    private readonly lr: number,
    private readonly beta1 = 0.9,
    private readonly beta2 = 0.999,
    private readonly eps = 1e-8,
    private readonly clipNorm = 1.0
  ) {
    this.m = params.map((p) => new Float64Array(p.values.length));
    this.v = params.map((p) => new Float64Array(p.values.length));
  }

  step(): void {
    this.t++;
    let sq = 0;
    for (const param of this.params) {
      for (let i = 0; i < param.grads.length; i++) sq += param.grads[i] * param.grads[i];
    }
    const norm = Math.sqrt(sq);
    const scale = this.clipNorm > 0 && norm > this.clipNorm ? this.clipNorm / norm : 1.0;

    const c1 = 1 - Math.pow(this.beta1, this.t);
    const c2 = 1 - Math.pow(this.beta2, this.t);
    for (let p = 0; p < this.params.length; p++) {
      const { values, grads } = this.params[p];
      const m = this.m[p];
      const v = this.v[p];
      for (let i = 0; i < values.length; i++) {
        const g = grads[i] * scale;
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g;
        v[i] = this.beta2 * v[i] + (1 - this.beta2) * g * g;
        values[i] -= (this.lr * (m[i] / c1)) / (Math.sqrt(v[i] / c2) + this.eps);
      }
    }
  }
}
