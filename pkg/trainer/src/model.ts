/**
 * Tiny causal transformer language model with adapter fine-tuning.
 *
 * Base weights (embeddings, attention/MLP/head matrices) are frozen at their
 * seeded random initialization; training updates only low-rank adapter
 * factors on every projection, the layer norms, and the biases. Forward and
 * backward passes are written out explicitly over Float64Arrays so runs are
 * deterministic for a fixed seed.
 */

import { gaussian, mulberry32, Rng } from "./rng.js";
import { PackedExample } from "./data.js";

export interface ModelConfig {
  vocabSize: number;
  dModel: number;
  nHeads: number;
  nLayers: number;
  maxSeq: number;
  adapterRank: number;
  adapterScale: number;
}

export interface Param {
  name: string;
  values: Float64Array;
  grads: Float64Array;
}

function zeros(n: number): Float64Array {
  return new Float64Array(n);
}

function randn(n: number, std: number, rng: Rng): Float64Array {
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) out[i] = gaussian(rng) * std;
  return out;
}

/** c = a(ra x ca) . b(ca x cb) */
function mm(a: Float64Array, ra: number, ca: number, b: Float64Array, cb: number): Float64Array {
  const c = new Float64Array(ra * cb);
  for (let i = 0; i < ra; i++) {
    for (let j = 0; j < ca; j++) {
      const av = a[i * ca + j];
      if (av === 0) continue;
      const bRow = j * cb;
      const cRow = i * cb;
      for (let k = 0; k < cb; k++) c[cRow + k] += av * b[bRow + k];
    }
  }
  return c;
}

/** c = a(ra x ca) . b(rb x ca)^T  ->  (ra x rb) */
function mmTB(a: Float64Array, ra: number, ca: number, b: Float64Array, rb: number): Float64Array {
  const c = new Float64Array(ra * rb);
  for (let i = 0; i < ra; i++) {
    for (let j = 0; j < rb; j++) {
      let acc = 0;
      for (let k = 0; k < ca; k++) acc += a[i * ca + k] * b[j * ca + k];
      c[i * rb + j] = acc;
    }
  }
  return c;
}

/** c += a(ra x ca)^T . b(ra x cb)  ->  (ca x cb), accumulated into out */
function addmmTA(
  out: Float64Array,
  a: Float64Array,
  ra: number,
  ca: number,
  b: Float64Array,
  cb: number,
  factor: number
): void {
  for (let i = 0; i < ra; i++) {
    for (let j = 0; j < ca; j++) {
      const av = a[i * ca + j] * factor;
      if (av === 0) continue;
      const bRow = i * cb;
      const oRow = j * cb;
      for (let k = 0; k < cb; k++) out[oRow + k] += av * b[bRow + k];
    }
  }
}

interface LinearCache {
  x: Float64Array;
  xa: Float64Array | null;
  rows: number;
}

class LoraLinear {
  readonly W: Float64Array; // frozen, inDim x outDim
  readonly b: Float64Array;
  readonly A: Float64Array; // inDim x rank
  readonly B: Float64Array; // rank x outDim
  readonly db: Float64Array;
  readonly dA: Float64Array;
  readonly dB: Float64Array;

  constructor(
    readonly name: string,
    readonly inDim: number,
    readonly outDim: number,
    readonly rank: number,
    readonly scale: number,
    baseRng: Rng,
    adapterRng: Rng
  ) {
    this.W = randn(inDim * outDim, 0.02, baseRng);
    this.b = zeros(outDim);
    this.A = rank > 0 ? randn(inDim * rank, 0.01, adapterRng) : zeros(0);
    this.B = zeros(rank * outDim); // zero start: adapters begin as a no-op
    this.db = zeros(outDim);
    this.dA = zeros(this.A.length);
    this.dB = zeros(this.B.length);
  }

  params(): Param[] {
    const out: Param[] = [{ name: `${this.name}.b`, values: this.b, grads: this.db }];
    if (this.rank > 0) {
      out.push({ name: `${this.name}.A`, values: this.A, grads: this.dA });
      out.push({ name: `${this.name}.B`, values: this.B, grads: this.dB });
    }
    return out;
  }

  forward(x: Float64Array, rows: number): { y: Float64Array; cache: LinearCache } {
    const y = mm(x, rows, this.inDim, this.W, this.outDim);
    let xa: Float64Array | null = null;
    if (this.rank > 0) {
      xa = mm(x, rows, this.inDim, this.A, this.rank);
      const delta = mm(xa, rows, this.rank, this.B, this.outDim);
      for (let i = 0; i < y.length; i++) y[i] += this.scale * delta[i];
    }
    for (let i = 0; i < rows; i++) {
      const row = i * this.outDim;
      for (let j = 0; j < this.outDim; j++) y[row + j] += this.b[j];
    }
    return { y, cache: { x, xa, rows } };
  }

  backward(dy: Float64Array, cache: LinearCache): Float64Array {
    const { x, xa, rows } = cache;
    for (let i = 0; i < rows; i++) {
      const row = i * this.outDim;
      for (let j = 0; j < this.outDim; j++) this.db[j] += dy[row + j];
    }
    const dx = mmTB(dy, rows, this.outDim, this.W, this.inDim);
    if (this.rank > 0 && xa) {
      addmmTA(this.dB, xa, rows, this.rank, dy, this.outDim, this.scale);
      const dyBt = mmTB(dy, rows, this.outDim, this.B, this.rank); // rows x rank
      addmmTA(this.dA, x, rows, this.inDim, dyBt, this.rank, this.scale);
      const deltaDx = mmTB(dyBt, rows, this.rank, this.A, this.inDim);
      for (let i = 0; i < dx.length; i++) dx[i] += this.scale * deltaDx[i];
    }
    return dx;
  }
}

interface NormCache {
  xhat: Float64Array;
  inv: Float64Array;
  rows: number;
}

class LayerNorm {
  readonly g: Float64Array;
  readonly b: Float64Array;
  readonly dg: Float64Array;
  readonly db: Float64Array;
  private static readonly EPS = 1e-5;

  constructor(readonly name: string, readonly dim: number) {
    this.g = new Float64Array(dim).fill(1);
    this.b = zeros(dim);
    this.dg = zeros(dim);
    this.db = zeros(dim);
  }

  params(): Param[] {
    return [
      { name: `${this.name}.g`, values: this.g, grads: this.dg },
      { name: `${this.name}.b`, values: this.b, grads: this.db },
    ];
  }

  forward(x: Float64Array, rows: number): { y: Float64Array; cache: NormCache } {
    const d = this.dim;
    const y = new Float64Array(rows * d);
    const xhat = new Float64Array(rows * d);
    const inv = new Float64Array(rows);
    for (let i = 0; i < rows; i++) {
      const row = i * d;
      let mean = 0;
      for (let j = 0; j < d; j++) mean += x[row + j];
      mean /= d;
      let variance = 0;
      for (let j = 0; j < d; j++) {
        const c = x[row + j] - mean;
        variance += c * c;
      }
      variance /= d;
      const invStd = 1 / Math.sqrt(variance + LayerNorm.EPS);
      inv[i] = invStd;
      for (let j = 0; j < d; j++) {
        const h = (x[row + j] - mean) * invStd;
        xhat[row + j] = h;
        y[row + j] = this.g[j] * h + this.b[j];
      }
    }
    return { y, cache: { xhat, inv, rows } };
  }

  backward(dy: Float64Array, cache: NormCache): Float64Array {
    const d = this.dim;
    const { xhat, inv, rows } = cache;
    const dx = new Float64Array(rows * d);
    for (let i = 0; i < rows; i++) {
      const row = i * d;
      let meanDxhat = 0;
      let meanDxhatXhat = 0;
      for (let j = 0; j < d; j++) {
        const dyj = dy[row + j];
        this.dg[j] += dyj * xhat[row + j];
        this.db[j] += dyj;
        const dxhat = dyj * this.g[j];
        meanDxhat += dxhat;
        meanDxhatXhat += dxhat * xhat[row + j];
      }
      meanDxhat /= d;
      meanDxhatXhat /= d;
      for (let j = 0; j < d; j++) {
        const dxhat = dy[row + j] * this.g[j];
        dx[row + j] = inv[i] * (dxhat - meanDxhat - xhat[row + j] * meanDxhatXhat);
      }
    }
    return dx;
  }
}

const GELU_K = Math.sqrt(2 / Math.PI);

function gelu(x: number): number {
  return 0.5 * x * (1 + Math.tanh(GELU_K * (x + 0.044715 * x * x * x)));
}

function geluGrad(x: number): number {
  const inner = GELU_K * (x + 0.044715 * x * x * x);
  const t = Math.tanh(inner);
  const dInner = GELU_K * (1 + 3 * 0.044715 * x * x);
  return 0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dInner;
}

interface AttnCache {
  q: Float64Array;
  k: Float64Array;
  v: Float64Array;
  probs: Float64Array[]; // per head, T x T
  T: number;
}

interface BlockCache {
  ln1: NormCache;
  qkv: LinearCache;
  attn: AttnCache;
  proj: LinearCache;
  ln2: NormCache;
  fc1: LinearCache;
  preGelu: Float64Array;
  fc2: LinearCache;
}

class Block {
  readonly ln1: LayerNorm;
  readonly qkv: LoraLinear;
  readonly proj: LoraLinear;
  readonly ln2: LayerNorm;
  readonly fc1: LoraLinear;
  readonly fc2: LoraLinear;

  constructor(name: string, cfg: ModelConfig, baseRng: Rng, adapterRng: Rng) {
    const d = cfg.dModel;
    const r = cfg.adapterRank;
    const s = cfg.adapterRank > 0 ? cfg.adapterScale / cfg.adapterRank : 0;
    this.ln1 = new LayerNorm(`${name}.ln1`, d);
    this.qkv = new LoraLinear(`${name}.qkv`, d, 3 * d, r, s, baseRng, adapterRng);
    this.proj = new LoraLinear(`${name}.proj`, d, d, r, s, baseRng, adapterRng);
    this.ln2 = new LayerNorm(`${name}.ln2`, d);
    this.fc1 = new LoraLinear(`${name}.fc1`, d, 4 * d, r, s, baseRng, adapterRng);
    this.fc2 = new LoraLinear(`${name}.fc2`, 4 * d, d, r, s, baseRng, adapterRng);
  }

  params(): Param[] {
    return [
      ...this.ln1.params(),
      ...this.qkv.params(),
      ...this.proj.params(),
      ...this.ln2.params(),
      ...this.fc1.params(),
      ...this.fc2.params(),
    ];
  }

  private attention(
    qkvOut: Float64Array,
    T: number,
    cfg: ModelConfig
  ): { y: Float64Array; cache: AttnCache } {
    const d = cfg.dModel;
    const H = cfg.nHeads;
    const hd = d / H;
    const invSqrt = 1 / Math.sqrt(hd);
    const q = new Float64Array(T * d);
    const k = new Float64Array(T * d);
    const v = new Float64Array(T * d);
    for (let t = 0; t < T; t++) {
      const src = t * 3 * d;
      q.set(qkvOut.subarray(src, src + d), t * d);
      k.set(qkvOut.subarray(src + d, src + 2 * d), t * d);
      v.set(qkvOut.subarray(src + 2 * d, src + 3 * d), t * d);
    }
    const y = new Float64Array(T * d);
    const probs: Float64Array[] = [];
    for (let h = 0; h < H; h++) {
      const off = h * hd;
      const p = new Float64Array(T * T);
      for (let i = 0; i < T; i++) {
        let maxScore = -Infinity;
        const scores = new Float64Array(i + 1);
        for (let j = 0; j <= i; j++) {
          let acc = 0;
          for (let c = 0; c < hd; c++) acc += q[i * d + off + c] * k[j * d + off + c];
          const score = acc * invSqrt;
          scores[j] = score;
          if (score > maxScore) maxScore = score;
        }
        let total = 0;
        for (let j = 0; j <= i; j++) {
          const e = Math.exp(scores[j] - maxScore);
          p[i * T + j] = e;
          total += e;
        }
        for (let j = 0; j <= i; j++) {
          p[i * T + j] /= total;
          const w = p[i * T + j];
          for (let c = 0; c < hd; c++) y[i * d + off + c] += w * v[j * d + off + c];
        }
      }
      probs.push(p);
    }
    return { y, cache: { q, k, v, probs, T } };
  }

  private attentionBackward(dy: Float64Array, cache: AttnCache, cfg: ModelConfig): Float64Array {
    const d = cfg.dModel;
    const H = cfg.nHeads;
    const hd = d / H;
    const invSqrt = 1 / Math.sqrt(hd);
    const { q, k, v, probs, T } = cache;
    const dqkv = new Float64Array(T * 3 * d);
    for (let h = 0; h < H; h++) {
      const off = h * hd;
      const p = probs[h];
      for (let i = 0; i < T; i++) {
        // dP[i][j] = dy_i . v_j ; dV accumulates p * dy
        const dp = new Float64Array(i + 1);
        for (let j = 0; j <= i; j++) {
          let acc = 0;
          for (let c = 0; c < hd; c++) acc += dy[i * d + off + c] * v[j * d + off + c];
          dp[j] = acc;
          const w = p[i * T + j];
          for (let c = 0; c < hd; c++) {
            dqkv[j * 3 * d + 2 * d + off + c] += w * dy[i * d + off + c];
          }
        }
        // softmax backward
        let dot = 0;
        for (let j = 0; j <= i; j++) dot += dp[j] * p[i * T + j];
        for (let j = 0; j <= i; j++) {
          const dscore = p[i * T + j] * (dp[j] - dot) * invSqrt;
          for (let c = 0; c < hd; c++) {
            dqkv[i * 3 * d + off + c] += dscore * k[j * d + off + c];
            dqkv[j * 3 * d + d + off + c] += dscore * q[i * d + off + c];
          }
        }
      }
    }
    return dqkv;
  }

  forward(x: Float64Array, T: number, cfg: ModelConfig): { y: Float64Array; cache: BlockCache } {
    const d = cfg.dModel;
    const ln1 = this.ln1.forward(x, T);
    const qkv = this.qkv.forward(ln1.y, T);
    const attn = this.attention(qkv.y, T, cfg);
    const proj = this.proj.forward(attn.y, T);
    const mid = new Float64Array(T * d);
    for (let i = 0; i < mid.length; i++) mid[i] = x[i] + proj.y[i];

    const ln2 = this.ln2.forward(mid, T);
    const fc1 = this.fc1.forward(ln2.y, T);
    const activated = new Float64Array(fc1.y.length);
    for (let i = 0; i < fc1.y.length; i++) activated[i] = gelu(fc1.y[i]);
    const fc2 = this.fc2.forward(activated, T);
    const y = new Float64Array(T * d);
    for (let i = 0; i < y.length; i++) y[i] = mid[i] + fc2.y[i];
    return {
      y,
      cache: {
        ln1: ln1.cache,
        qkv: qkv.cache,
        attn: attn.cache,
        proj: proj.cache,
        ln2: ln2.cache,
        fc1: fc1.cache,
        preGelu: fc1.y,
        fc2: fc2.cache,
      },
    };
  }

  backward(dy: Float64Array, cache: BlockCache, cfg: ModelConfig): Float64Array {
    const dFc2In = this.fc2.backward(dy, cache.fc2);
    const dPreGelu = new Float64Array(dFc2In.length);
    for (let i = 0; i < dFc2In.length; i++) dPreGelu[i] = dFc2In[i] * geluGrad(cache.preGelu[i]);
    const dLn2Out = this.fc1.backward(dPreGelu, cache.fc1);
    const dMidFromMlp = this.ln2.backward(dLn2Out, cache.ln2);
    // residual: gradient w.r.t. mid is dy (skip path) + MLP path
    const dMid = new Float64Array(dy.length);
    for (let i = 0; i < dy.length; i++) dMid[i] = dy[i] + dMidFromMlp[i];

    const dAttnOut = this.proj.backward(dMid, cache.proj);
    const dQkv = this.attentionBackward(dAttnOut, cache.attn, cfg);
    const dLn1Out = this.qkv.backward(dQkv, cache.qkv);
    const dxFromAttn = this.ln1.backward(dLn1Out, cache.ln1);
    const dx = new Float64Array(dy.length);
    for (let i = 0; i < dx.length; i++) dx[i] = dMid[i] + dxFromAttn[i];
    return dx;
  }
}

interface ForwardCache {
  T: number;
  inputs: number[];
  blocks: BlockCache[];
  lnF: NormCache;
  head: LinearCache;
  logits: Float64Array;
}

export class TinyCausalLM {
  readonly cfg: ModelConfig;
  readonly tokEmb: Float64Array; // frozen
  readonly posEmb: Float64Array; // frozen
  readonly blocks: Block[];
  readonly lnF: LayerNorm;
  readonly head: LoraLinear;

  constructor(cfg: ModelConfig, baseSeed: number, adapterSeed: number) {
    if (cfg.dModel % cfg.nHeads !== 0) {
      throw new Error("dModel must be divisible by nHeads");
    }
    this.cfg = cfg;
    const baseRng = mulberry32(baseSeed);
    const adapterRng = mulberry32(adapterSeed);
    this.tokEmb = randn(cfg.vocabSize * cfg.dModel, 0.02, baseRng);
    this.posEmb = randn(cfg.maxSeq * cfg.dModel, 0.02, baseRng);
    const scale = cfg.adapterRank > 0 ? cfg.adapterScale / cfg.adapterRank : 0;
    this.blocks = [];
    for (let l = 0; l < cfg.nLayers; l++) {
      this.blocks.push(new Block(`block${l}`, cfg, baseRng, adapterRng));
    }
    this.lnF = new LayerNorm("lnF", cfg.dModel);
    this.head = new LoraLinear(
      "head",
      cfg.dModel,
      cfg.vocabSize,
      cfg.adapterRank,
      scale,
      baseRng,
      adapterRng
    );
  }

  params(): Param[] {
    const out: Param[] = [];
    for (const block of this.blocks) out.push(...block.params());
    out.push(...this.lnF.params(), ...this.head.params());
    return out;
  }

  zeroGrads(): void {
    for (const param of this.params()) param.grads.fill(0);
  }

  private forwardExample(inputs: number[]): ForwardCache {
    const d = this.cfg.dModel;
    const T = inputs.length;
    if (T > this.cfg.maxSeq) {
      throw new Error(`sequence length ${T} exceeds model maximum ${this.cfg.maxSeq}`);
    }
    let x: Float64Array = new Float64Array(T * d);
    for (let t = 0; t < T; t++) {
      const tok = inputs[t] * d;
      const pos = t * d;
      for (let j = 0; j < d; j++) x[t * d + j] = this.tokEmb[tok + j] + this.posEmb[pos + j];
    }
    const blockCaches: BlockCache[] = [];
    for (const block of this.blocks) {
      const { y, cache } = block.forward(x, T, this.cfg);
      blockCaches.push(cache);
      x = y;
    }
    const lnF = this.lnF.forward(x, T);
    const head = this.head.forward(lnF.y, T);
    return { T, inputs, blocks: blockCaches, lnF: lnF.cache, head: head.cache, logits: head.y };
  }

  /**
   * Mean masked cross-entropy over the batch; when train=true, gradients for
   * the trainable parameters accumulate into their grad buffers.
   */
  batchLoss(batch: PackedExample[], train: boolean): { loss: number; maskedTokens: number } {
    const V = this.cfg.vocabSize;
    let totalMasked = 0;
    for (const example of batch) {
      for (const m of example.mask) totalMasked += m;
    }
    if (totalMasked === 0) {
      throw new Error("batch has no completion tokens to learn from");
    }
    let lossSum = 0;
    for (const example of batch) {
      const fwd = this.forwardExample(example.inputs);
      const T = fwd.T;
      const dLogits = train ? new Float64Array(T * V) : null;
      for (let t = 0; t < T; t++) {
        if (example.mask[t] !== 1) continue;
        const row = t * V;
        let maxLogit = -Infinity;
        for (let j = 0; j < V; j++) {
          if (fwd.logits[row + j] > maxLogit) maxLogit = fwd.logits[row + j];
        }
        let total = 0;
        for (let j = 0; j < V; j++) total += Math.exp(fwd.logits[row + j] - maxLogit);
        const logZ = maxLogit + Math.log(total);
        const target = example.targets[t];
        lossSum += logZ - fwd.logits[row + target];
        if (dLogits) {
          for (let j = 0; j < V; j++) {
            dLogits[row + j] = Math.exp(fwd.logits[row + j] - logZ) / totalMasked;
          }
          dLogits[row + target] -= 1 / totalMasked;
        }
      }
      if (dLogits) {
        let dx = this.head.backward(dLogits, fwd.head);
        dx = this.lnF.backward(dx, fwd.lnF);
        for (let l = this.blocks.length - 1; l >= 0; l--) {
          dx = this.blocks[l].backward(dx, fwd.blocks[l], this.cfg);
        }
        // embeddings are frozen: dx stops here
      }
    }
    return { loss: lossSum / totalMasked, maskedTokens: totalMasked };
  }
}
