#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>
#include <signal.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "twlr/error.hpp"
#include "twlr/image.hpp"
#include "twlr/png_io.hpp"

namespace twlr {

struct InpaintRequest {
  const Image& image;
  const BinaryMask& mask;  // 1 = fill

  void validate() const {
    require_same_size(image.width, image.height, mask.width, mask.height, "inpaint");
    if (!mask.data.empty() && mask.full())
      throw DegenerateMaskError("inpaint: mask covers the whole image, nothing to anchor the fill");
  }
};

class Inpainter {
 public:
  virtual ~Inpainter() = default;
  virtual Image inpaint(const InpaintRequest& request) const = 0;
  Image inpaint(const Image& image, const BinaryMask& mask) const { return inpaint(InpaintRequest{image, mask}); }
};

/// Harmonic (Laplace) fill: masked pixels converge to the average of their
/// 4-neighbours. Each masked region starts from the mean of the unmasked
/// pixels bordering it, then Jacobi sweeps run until no value moves by 0.5 or
/// more, or the sweep cap is hit.
class HarmonicInpainter : public Inpainter {
 public:
  explicit HarmonicInpainter(int max_sweeps = 500, double tolerance = 0.5)
      : max_sweeps_(max_sweeps), tolerance_(tolerance) {}

  using Inpainter::inpaint;

  Image inpaint(const InpaintRequest& req) const override { return fill(req, nullptr); }

  /// As inpaint(), also reporting the number of sweeps run.
  Image fill(const InpaintRequest& req, int* sweeps_used) const {
    req.validate();
    if (sweeps_used) *sweeps_used = 0;
    const Image& img = req.image;
    const BinaryMask& mask = req.mask;
    if (mask.empty()) return img;
    const int W = img.width, H = img.height, C = img.channels;

    std::vector<int> holes;
    for (int i = 0; i < W * H; ++i)
      if (mask.data[i]) holes.push_back(i);

    std::vector<double> cur(img.data.begin(), img.data.end());
    seed_regions(img, mask, cur);

    std::vector<double> next = cur;
    static constexpr int dx[4] = {1, -1, 0, 0};
    static constexpr int dy[4] = {0, 0, 1, -1};
    for (int sweep = 0; sweep < max_sweeps_; ++sweep) {
      double max_change = 0;
      for (int i : holes) {
        const int x = i % W, y = i / W;
        for (int c = 0; c < C; ++c) {
          double sum = 0;
          int n = 0;
          for (int k = 0; k < 4; ++k) {
            const int nx = x + dx[k], ny = y + dy[k];
            if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
            sum += cur[(static_cast<std::size_t>(ny) * W + nx) * C + c];
            ++n;
          }
          const std::size_t j = static_cast<std::size_t>(i) * C + c;
          next[j] = sum / n;
          max_change = std::max(max_change, std::abs(next[j] - cur[j]));
        }
      }
      for (int i : holes)
        for (int c = 0; c < C; ++c) {
          const std::size_t j = static_cast<std::size_t>(i) * C + c;
          cur[j] = next[j];
        }
      if (sweeps_used) *sweeps_used = sweep + 1;
      if (max_change < tolerance_) break;
    }

    Image out = img;
    for (int i : holes)
      for (int c = 0; c < C; ++c) {
        const std::size_t j = static_cast<std::size_t>(i) * C + c;
        out.data[j] = clamp_to_byte(cur[j]);
      }
    return out;
  }

 private:
  // Per 4-connected hole region, start every pixel at the mean of the region's
  // unmasked border pixels.
  static void seed_regions(const Image& img, const BinaryMask& mask, std::vector<double>& cur) {
    const int W = img.width, H = img.height, C = img.channels;
    std::vector<int> label(static_cast<std::size_t>(W) * H, -1);
    std::vector<int> stack, region;
    std::vector<int> border_seen(static_cast<std::size_t>(W) * H, -1);
    static constexpr int dx[4] = {1, -1, 0, 0};
    static constexpr int dy[4] = {0, 0, 1, -1};
    int next_label = 0;
    for (int start = 0; start < W * H; ++start) {
      if (!mask.data[start] || label[start] >= 0) continue;
      region.clear();
      std::vector<int> border;
      label[start] = next_label;
      stack.push_back(start);
      while (!stack.empty()) {
        int i = stack.back();
        stack.pop_back();
        region.push_back(i);
        const int x = i % W, y = i / W;
        for (int k = 0; k < 4; ++k) {
          const int nx = x + dx[k], ny = y + dy[k];
          if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
          const int j = ny * W + nx;
          if (mask.data[j]) {
            if (label[j] < 0) {
              label[j] = next_label;
              stack.push_back(j);
            }
          } else if (border_seen[j] != next_label) {
            border_seen[j] = next_label;
            border.push_back(j);
          }
        }
      }
      std::vector<double> mean(C, 0.0);
      for (int j : border)
        for (int c = 0; c < C; ++c) mean[c] += img.data[static_cast<std::size_t>(j) * C + c];
      for (int c = 0; c < C; ++c) mean[c] /= std::max<std::size_t>(1, border.size());
      for (int i : region)
        for (int c = 0; c < C; ++c) cur[static_cast<std::size_t>(i) * C + c] = mean[c];
      ++next_label;
    }
  }

  int max_sweeps_;
  double tolerance_;
};

/// Runs a user command that reads `inpaint_in.png` and `inpaint_mask.png` from
/// a job directory and writes `inpaint_out.png` there. Each call gets its own
/// job directory under `work_dir`, so concurrent calls do not collide. The
/// command runs via `/bin/sh -c` with the job directory as its cwd; `{dir}` in
/// the command is replaced by its path. Unmasked pixels of the result are
/// restored from the input.
class ExternalInpainter : public Inpainter {
 public:
  ExternalInpainter(std::string command, std::filesystem::path work_dir, double timeout_seconds = 60.0)
      : command_(std::move(command)),
        work_dir_(std::move(work_dir)),
        timeout_(timeout_seconds),
        jobs_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

  using Inpainter::inpaint;

  Image inpaint(const InpaintRequest& req) const override {
    req.validate();
    if (req.mask.empty()) return req.image;
    const auto job = work_dir_ / ("job_" + std::to_string(jobs_->fetch_add(1)));
    std::filesystem::remove_all(job);
    std::filesystem::create_directories(job);
    const auto out_path = job / "inpaint_out.png";
    write_png(job / "inpaint_in.png", req.image);
    write_png(job / "inpaint_mask.png", mask_to_image(req.mask));

    std::string cmd = command_;
    for (std::size_t pos; (pos = cmd.find("{dir}")) != std::string::npos;)
      cmd.replace(pos, 5, job.string());
    run_with_timeout(cmd, job);

    if (!std::filesystem::exists(out_path))
      throw std::runtime_error("external inpainter did not write " + out_path.string());
    Image result = read_png(out_path, req.image.channels);
    require_same_size(result.width, result.height, req.image.width, req.image.height, "external inpainter output");
    for (std::size_t i = 0; i < req.mask.size(); ++i)
      if (!req.mask.data[i])
        for (int c = 0; c < req.image.channels; ++c)
          result.data[i * req.image.channels + c] = req.image.data[i * req.image.channels + c];
    std::filesystem::remove_all(job);
    return result;
  }

 private:
  void run_with_timeout(const std::string& cmd, const std::filesystem::path& cwd) const {
    pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("external inpainter: fork failed");
    if (pid == 0) {
      if (chdir(cwd.c_str()) != 0) _exit(127);
      execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_);
    int status = 0;
    while (true) {
      pid_t r = waitpid(pid, &status, WNOHANG);
      if (r == pid) break;
      if (r < 0) throw std::runtime_error("external inpainter: waitpid failed");
      if (std::chrono::steady_clock::now() > deadline) {
        kill(pid, SIGKILL);
        waitpid(pid, &status, 0);
        throw std::runtime_error("external inpainter timed out after " + std::to_string(timeout_) + " s");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw std::runtime_error("external inpainter exited with status " +
                               std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  }

  std::string command_;
  std::filesystem::path work_dir_;
  double timeout_;
  std::shared_ptr<std::atomic<std::uint64_t>> jobs_;
};

}  // namespace twlr
