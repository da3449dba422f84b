/** Prompt-ensemble templates; `{}` is replaced by the class name. */

export const DEFAULT_TEMPLATES: string[] = [
  'itap of a {}.',
  'a bad photo of the {}.',
  'a origami {}.',
  'a photo of the large {}.',
  'a {} in a video game.',
  'art of the {}.',
  'a photo of the small {}.',
];

export function fillTemplate(template: string, className: string): string {
  if (!template.includes('{}')) {
    throw new Error(`template "${template}" has no {} placeholder`);
  }
  return template.replaceAll('{}', className);
}
