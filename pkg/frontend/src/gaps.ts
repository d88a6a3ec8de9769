/** Gap-marker rendering: one clickable marker per insertion gap, visual
 * weight monotone in the model's probability, top gap highlighted. */

export interface GapMarker {
  index: number;
  probability: number;
  /** 0..1, probability / max probability */
  weight: number;
  top: boolean;
}

export function computeGapMarkers(probabilities: number[]): GapMarker[] {
  const max = Math.max(...probabilities);
  let top = 0;
  for (let i = 1; i < probabilities.length; i++) {
    if (probabilities[i] > probabilities[top]) {
      top = i;
    }
  }
  return probabilities.map((p, index) => ({
    index,
    probability: p,
    weight: max > 0 ? p / max : 0,
    top: index === top,
  }));
}

/** Rebuild the editor line: char spans interleaved with gap buttons. */
export function renderGaps(
  container: HTMLElement,
  text: string,
  markers: GapMarker[],
  onSelect: (gap: number) => void,
): void {
  container.textContent = '';
  for (let i = 0; i <= text.length; i++) {
    const marker = markers[i];
    const button = document.createElement('button');
    button.type = 'button';
    button.className = 'gap-marker' + (marker.top ? ' gap-top' : '');
    button.dataset.gap = String(i);
    button.title = `gap ${i}: ${(marker.probability * 100).toFixed(1)}%`;
    button.style.setProperty('--weight', marker.weight.toFixed(4));
    button.addEventListener('click', () => onSelect(i));
    container.appendChild(button);
    if (i < text.length) {
      const span = document.createElement('span');
      span.className = 'editor-char';
      span.textContent = text[i];
      container.appendChild(span);
    }
  }
}

/** Plain text with no locate result yet. */
export function renderPlainText(container: HTMLElement, text: string): void {
  container.textContent = '';
  const span = document.createElement('span');
  span.className = 'editor-plain';
  span.textContent = text;
  container.appendChild(span);
}
