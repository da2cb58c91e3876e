/** Minimal three.js viewport: the decoded garment over a ground plane, with
 *  drag-to-orbit and wheel zoom. */

import * as THREE from "three";

import type { MeshPayload } from "./api.js";

export class MeshViewer {
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private garment: THREE.Mesh | null = null;
  private body: THREE.Mesh | null = null;
  private azimuth = 0.6;
  private elevation = 0.25;
  private distance = 1.6;

  constructor(container: HTMLElement) {
    const w = container.clientWidth || 640;
    const h = container.clientHeight || 480;
    this.camera = new THREE.PerspectiveCamera(40, w / h, 0.01, 20);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(w, h);
    container.appendChild(this.renderer.domElement);

    this.scene.background = new THREE.Color(0x1c1f26);
    const key = new THREE.DirectionalLight(0xffffff, 2.2);
    key.position.set(1, 2, 2);
    this.scene.add(key);
    this.scene.add(new THREE.AmbientLight(0x8899aa, 0.8));

    let dragging = false;
    let last = [0, 0];
    this.renderer.domElement.addEventListener("pointerdown", (e: PointerEvent) => {
      dragging = true;
      last = [e.clientX, e.clientY];
    });
    window.addEventListener("pointerup", () => (dragging = false));
    window.addEventListener("pointermove", (e: PointerEvent) => {
      if (!dragging) return;
      this.azimuth -= (e.clientX - last[0]) * 0.01;
      this.elevation = Math.min(1.4, Math.max(-1.4, this.elevation + (e.clientY - last[1]) * 0.01));
      last = [e.clientX, e.clientY];
      this.render();
    });
    this.renderer.domElement.addEventListener("wheel", (e: WheelEvent) => {
      e.preventDefault();
      this.distance = Math.min(6, Math.max(0.4, this.distance * (1 + e.deltaY * 0.001)));
      this.render();
    });
    this.render();
  }

  private static toGeometry(mesh: MeshPayload): THREE.BufferGeometry {
    const geo = new THREE.BufferGeometry();
    const pos = new Float32Array(mesh.vertices.length * 3);
    mesh.vertices.forEach((v, i) => pos.set(v, i * 3));
    const idx = new Uint32Array(mesh.faces.length * 3);
    mesh.faces.forEach((f, i) => idx.set(f, i * 3));
    geo.setAttribute("position", new THREE.BufferAttribute(pos, 3));
    geo.setIndex(new THREE.BufferAttribute(idx, 1));
    geo.computeVertexNormals();
    return geo;
  }

  showGarment(mesh: MeshPayload): void {
    if (this.garment) {
      this.scene.remove(this.garment);
      this.garment.geometry.dispose();
    }
    const mat = new THREE.MeshStandardMaterial({
      color: 0xcc5544, side: THREE.DoubleSide, roughness: 0.8,
    });
    this.garment = new THREE.Mesh(MeshViewer.toGeometry(mesh), mat);
    this.scene.add(this.garment);
    this.render();
  }

  showBody(mesh: MeshPayload): void {
    if (this.body) {
      this.scene.remove(this.body);
      this.body.geometry.dispose();
    }
    const mat = new THREE.MeshStandardMaterial({ color: 0x667788, roughness: 0.9 });
    this.body = new THREE.Mesh(MeshViewer.toGeometry(mesh), mat);
    this.scene.add(this.body);
    this.render();
  }

  render(): void {
    const r = this.distance;
    this.camera.position.set(
      r * Math.cos(this.elevation) * Math.sin(this.azimuth),
      r * Math.sin(this.elevation),
      r * Math.cos(this.elevation) * Math.cos(this.azimuth),
    );
    this.camera.lookAt(0, 0, 0);
    this.renderer.render(this.scene, this.camera);
  }
}
