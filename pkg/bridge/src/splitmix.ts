/**
 * SplitMix64 stream, matching the engine's seeded parameter draws
 * bit-for-bit: every float comes from the top 53 bits of the next state,
 * so only exact IEEE double operations are involved.
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;
const TWO_POW_MINUS_53 = Math.pow(2, -53);

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint | number) {
    this.state = BigInt(seed) & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + GAMMA) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
    z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
    return (z ^ (z >> 31n)) & MASK64;
  }

  uniform(): number {
    return Number(this.nextU64() >> 11n) * TWO_POW_MINUS_53;
  }

  uniformSigned(scale: number): number {
    return (this.uniform() * 2.0 - 1.0) * scale;
  }
}
