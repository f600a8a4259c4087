/** Zoom state for the case image: clamped scale with step controls. */

export class ZoomState {
  private scale = 1.0;

  constructor(
    private readonly min = 0.5,
    private readonly max = 8.0,
    private readonly step = 1.25,
  ) {}

  get value(): number {
    return this.scale;
  }

  zoomIn(): number {
    this.scale = Math.min(this.max, this.scale * this.step);
    return this.scale;
  }

  zoomOut(): number {
    this.scale = Math.max(this.min, this.scale / this.step);
    return this.scale;
  }

  reset(): number {
    this.scale = 1.0;
    return this.scale;
  }
}

/** Attach zoom controls to an image element; returns the state. */
export function attachZoom(image: HTMLImageElement, controls: HTMLElement): ZoomState {
  const state = new ZoomState();
  const apply = () => {
    image.style.transform = `scale(${state.value})`;
    image.style.transformOrigin = "top left";
  };
  const button = (label: string, onClick: () => void) => {
    const el = document.createElement("button");
    el.type = "button";
    el.textContent = label;
    el.addEventListener("click", () => {
      onClick();
      apply();
    });
    controls.appendChild(el);
    return el;
  };
  button("+", () => state.zoomIn());
  button("−", () => state.zoomOut());
  button("reset", () => state.reset());
  return state;
}
