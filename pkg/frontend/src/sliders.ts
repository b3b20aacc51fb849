import type { Meta } from "./types";

export interface SliderChange {
  block: "psi" | "theta";
  index: number;
  value: number;
}

/**
 * One labeled range input per expression / jaw coefficient, bounds taken
 * from the slider range /meta advertises.
 */
export function buildSliders(container: HTMLElement, meta: Meta,
                             onChange: (c: SliderChange) => void) {
  const [lo, hi] = meta.slider_range;
  const blocks: Array<["psi" | "theta", number, string]> = [
    ["psi", meta.n_psi, "expression"],
    ["theta", meta.n_theta, "jaw pose"],
  ];
  for (const [block, count, title] of blocks) {
    const section = document.createElement("section");
    section.className = `sliders-${block}`;
    const heading = document.createElement("h2");
    heading.textContent = title;
    section.appendChild(heading);
    for (let i = 0; i < count; i++) {
      const row = document.createElement("label");
      row.className = "slider-row";
      const name = document.createElement("span");
      name.textContent = `${block}[${i}]`;
      const value = document.createElement("output");
      value.textContent = "0.00";
      const input = document.createElement("input");
      input.type = "range";
      input.min = String(lo);
      input.max = String(hi);
      input.step = "0.05";
      input.value = "0";
      input.dataset.block = block;
      input.dataset.index = String(i);
      input.addEventListener("input", () => {
        const v = parseFloat(input.value);
        value.textContent = v.toFixed(2);
        onChange({ block, index: i, value: v });
      });
      row.append(name, input, value);
      section.appendChild(row);
    }
    container.appendChild(section);
  }
}
