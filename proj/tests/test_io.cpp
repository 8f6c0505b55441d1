#include "cgmot/io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <unistd.h>

using namespace cgmot;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("cgmot_io_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

Histogram<double> parse_h(const std::string& text) {
  std::istringstream in(text);
  return io::parse_histogram(in, "h.csv");
}

io::MatrixData parse_m(const std::string& text) {
  std::istringstream in(text);
  return io::parse_matrix(in, "m.csv");
}

}  // namespace

TEST(Histogram, Parse) {
  const auto h = parse_h("index,value\n1,2.5\n0,1\n2,0\n");
  EXPECT_EQ(h.values(), (Vector<double>{{1.0, 2.5, 0.0}}));
  EXPECT_EQ(parse_h("0,3\n1,4\n").values(), (Vector<double>{{3.0, 4.0}}));
}

TEST(Histogram, Errors) {
  EXPECT_THROW(parse_h("0,1\n0,2\n"), io::ParseError);
  EXPECT_THROW(parse_h("0,1\n2,2\n"), io::ParseError);
  EXPECT_THROW(parse_h("0,-1\n"), io::ParseError);
  EXPECT_THROW(parse_h("0,nan\n"), io::ParseError);
  EXPECT_THROW(parse_h(""), io::ParseError);
  try {
    parse_h("0,1\n1,x\n");
    FAIL();
  } catch (const io::ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST_F(TempDir, HistogramRoundTrip) {
  std::mt19937_64 rng(1);
  const auto h = fixtures::random_histogram(rng, 17, 3.7);
  io::save_histogram(dir / "sub" / "h.csv", h);
  EXPECT_EQ(io::load_histogram(dir / "sub" / "h.csv").values(), h.values());
}

TEST(Matrix, DenseAndTriplets) {
  const auto d = parse_m("1,2\n3,4\n");
  EXPECT_FALSE(d.sparse);
  EXPECT_EQ(d.to_dense(), (Matrix<double>{{1.0, 2.0}, {3.0, 4.0}}));
  const auto t = parse_m("row,col,value\n0,1,2.5\n1,0,1\n");
  EXPECT_TRUE(t.sparse);
  EXPECT_EQ(t.to_dense(), (Matrix<double>{{0.0, 2.5}, {1.0, 0.0}}));
  // Three columns and three rows without a header: dense.
  EXPECT_FALSE(parse_m("1,2,3\n4,5,6\n7,8,9\n").sparse);
  EXPECT_TRUE(parse_m("0,0,1\n1,1,1\n").sparse);
}

TEST(Matrix, DuplicateTripletNamesLine) {
  try {
    parse_m("row,col,value\n0,0,1\n1,1,1\n0,0,2\n");
    FAIL();
  } catch (const io::ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
  }
  EXPECT_THROW(parse_m("1,2\n3\n"), io::ParseError);
}

TEST_F(TempDir, MatrixRoundTrip) {
  std::mt19937_64 rng(2);
  const Matrix<double> m = fixtures::random_kernel(rng, 6).dense();
  io::save_matrix(dir / "m.csv", m);
  EXPECT_EQ(io::load_matrix(dir / "m.csv").to_dense(), m);
  SparseMatrix<double> s(5, 5);
  s.insert(0, 1) = 0.1;
  s.insert(4, 2) = 1.0 / 3.0;
  s.makeCompressed();
  // Triplet files carry no shape; it is taken from the largest indices.
  io::save_matrix(dir / "t.csv", s);
  EXPECT_EQ(io::load_matrix(dir / "t.csv").cols(), 3);
  s.insert(4, 4) = 2.0;
  s.makeCompressed();
  io::save_matrix(dir / "s.csv", s);
  const auto back = io::load_matrix(dir / "s.csv");
  EXPECT_TRUE(back.sparse);
  EXPECT_EQ(back.to_dense(), Matrix<double>(s));
  io::save_matrix(dir / "r.csv", Matrix<double>::Ones(2, 3));
  EXPECT_THROW(io::load_kernel(dir / "r.csv"), Error);
}

TEST(Files, MissingIsIOError) {
  EXPECT_THROW(io::load_histogram("/nonexistent/cgmot/h.csv"), io::IOError);
}

TEST(GridSpec, Parse) {
  const auto g = io::parse_grid_spec(R"({"rows": 3, "cols": 4, "q": 0.5})");
  EXPECT_EQ(g.rows, 3);
  EXPECT_EQ(g.cols, 4);
  EXPECT_EQ(g.q, 0.5);
  EXPECT_THROW(io::parse_grid_spec(R"({"rows": 3})"), io::ParseError);
  try {
    io::parse_grid_spec("{\n\"rows\": 3,\n oops\n}", "g.json");
    FAIL();
  } catch (const io::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST_F(TempDir, TreeWithPathsAndInline) {
  io::save_matrix(dir / "k.csv", Matrix<double>{{2.0, 1.0}, {1.0, 2.0}});
  io::save_histogram(dir / "obs" / "a.csv", Histogram<double>(Vector<double>{{3.0, 1.0}}));
  io::write_text(dir / "tree.json", R"({
    "nodes": [1, 2, 3],
    "edges": [{"u": 1, "v": 2, "kernel": "k.csv"}, {"u": 2, "v": 3, "kernel": [[1, 1], [1, 3]]}],
    "observations": {"1": "obs/a.csv", "3": [2, 2]},
    "mass": 4
  })");
  const auto t = io::load_tree(dir / "tree.json");
  EXPECT_EQ(t.nodes().size(), 3u);
  EXPECT_EQ(t.edges()[0].kernel.to_dense()(0, 0), 2.0);
  EXPECT_EQ(t.edges()[1].kernel.to_dense()(1, 1), 3.0);
  EXPECT_EQ(t.observation(t.index_of(1)).values()[0], 3.0);
  EXPECT_TRUE(t.observed(t.index_of(3)));
  EXPECT_FALSE(t.observed(t.index_of(2)));
}

TEST_F(TempDir, TreeMissingPathIsResolutionError) {
  io::write_text(dir / "tree.json", R"({"nodes": [1, 2], "edges": [{"u": 1, "v": 2, "kernel": "gone.csv"}], "mass": 1})");
  try {
    io::load_tree(dir / "tree.json");
    FAIL();
  } catch (const io::ResolutionError& e) {
    EXPECT_EQ(e.path(), dir / "gone.csv");
  }
}

TEST(FormatDouble, RoundTrips) {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, 123456789.123})
    EXPECT_EQ(std::stod(io::format_double(x)), x);
}
